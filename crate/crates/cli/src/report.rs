//! Results of each command and their CSV and JSON renderings.

use std::fmt::Write;

use fluidq_core::sim::{Regime, SimEstimate};
use serde::{Deserialize, Serialize};

use crate::config::Format;

pub trait Report: Serialize {
    fn to_csv(&self) -> String;

    fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
                s.push('\n');
                s
            }
        }
    }
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRow {
    pub state: String,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buffer1Row {
    pub x: f64,
    pub tail: f64,
    /// Per-phase density; absent at the boundary levels.
    pub density: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buffer1Report {
    pub kappa: f64,
    pub total_probability: f64,
    pub masses: Vec<MassRow>,
    pub rows: Vec<Buffer1Row>,
}

impl Report for Buffer1Report {
    fn to_csv(&self) -> String {
        let phases = self.rows.iter().find_map(|r| r.density.as_ref().map(Vec::len)).unwrap_or(0);
        let mut s = String::from("x,tail");
        for k in 0..phases {
            write!(s, ",density_{k}").unwrap();
        }
        s.push('\n');
        for r in &self.rows {
            write!(s, "{},{}", f6(r.x), f6(r.tail)).unwrap();
            match &r.density {
                Some(d) => d.iter().for_each(|v| write!(s, ",{}", f6(*v)).unwrap()),
                None => (0..phases).for_each(|_| s.push(',')),
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub y: f64,
    pub eta: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buffer2Report {
    pub eta: f64,
    /// `eb_c(η) + N eb_e(η) − c`.
    pub residual: f64,
    pub eb_c: f64,
    pub eb_e: f64,
    pub chi: f64,
    pub h_c: f64,
    pub prefactor: f64,
    pub k_lower: f64,
    pub k_upper: f64,
    pub rows: Vec<BoundRow>,
}

impl Report for Buffer2Report {
    fn to_csv(&self) -> String {
        let mut s = String::from("y,eta,lower,upper\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", f6(r.y), f6(r.eta), f6(r.lower), f6(r.upper)).unwrap();
        }
        s
    }
}

fn regime_label(r: Regime) -> &'static str {
    match r {
        Regime::AtZero => "0",
        Regime::AtThreshold => "x*",
        Regime::AtCap => "V",
        Regime::Lower => "band1",
        Regime::Upper => "band2",
    }
}

impl Report for SimEstimate {
    fn to_csv(&self) -> String {
        let mut s = String::from("quantity,level,prob,std_error,replications\n");
        for (name, rows) in [("P(X>x)", &self.x_tail), ("P(Y>y)", &self.y_tail)] {
            for r in rows {
                writeln!(s, "{name},{},{},{},{}", f6(r.level), f6(r.prob), f6(r.std_error), self.replications).unwrap();
            }
        }
        for r in &self.pinned {
            let name = format!("P(X={},phase={})", regime_label(r.regime), r.phase);
            writeln!(s, "{name},,{},{},{}", f6(r.prob), f6(r.std_error), self.replications).unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    /// Level whose tail is tabulated: `x*` or `3`.
    pub quantity: String,
    pub scenario: String,
    /// Buffer-1 capacity; `None` for an infinite buffer.
    pub v: Option<f64>,
    pub computed: Option<f64>,
    pub published: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablesReport {
    pub cells: Vec<TableCell>,
}

fn v_label(v: Option<f64>) -> String {
    v.map_or("inf".into(), |v| format!("{v}"))
}

impl TablesReport {
    /// Both tables laid out as printed, `*` marking cells off by more than the
    /// tolerance and `--` cells that failed.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut quantities: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !quantities.contains(&c.quantity.as_str()) {
                quantities.push(&c.quantity);
            }
        }
        for q in quantities {
            let cells: Vec<&TableCell> = self.cells.iter().filter(|c| c.quantity == q).collect();
            let mut vs: Vec<Option<f64>> = Vec::new();
            let mut scenarios: Vec<&str> = Vec::new();
            for c in &cells {
                if !vs.contains(&c.v) {
                    vs.push(c.v);
                }
                if !scenarios.contains(&c.scenario.as_str()) {
                    scenarios.push(&c.scenario);
                }
            }
            writeln!(s, "lim P(X > {q})").unwrap();
            write!(s, "{:<4}", "V").unwrap();
            for v in &vs {
                write!(s, "{:>10}", v_label(*v)).unwrap();
            }
            s.push('\n');
            for sc in scenarios {
                write!(s, "{sc:<4}").unwrap();
                for v in &vs {
                    let c = cells.iter().find(|c| c.scenario == sc && c.v == *v).expect("full table");
                    let cell = match c.computed {
                        Some(x) => format!("{x:.4}{}", if c.flagged { "*" } else { " " }),
                        None => "-- ".into(),
                    };
                    write!(s, "{cell:>10}").unwrap();
                }
                s.push('\n');
            }
            s.push('\n');
        }
        let flagged = self.cells.iter().filter(|c| c.flagged).count();
        writeln!(s, "{flagged} cell(s) deviate from the published values by more than 5e-4").unwrap();
        s
    }
}

impl Report for TablesReport {
    fn to_csv(&self) -> String {
        let mut s = String::from("quantity,scenario,v,computed,published,flagged\n");
        for c in &self.cells {
            let computed = c.computed.map_or(String::new(), |x| format!("{x:.4}"));
            writeln!(s, "{},{},{},{computed},{:.4},{}", c.quantity, c.scenario, v_label(c.v), c.published, c.flagged).unwrap();
        }
        s
    }
}
