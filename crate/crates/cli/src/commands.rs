//! The four subcommands.

use fluidq_core::{
    simulate, Buffer2Bounds, Buffer2Options, FluidError, ModelParams, SimEstimate, StationaryBuffer1,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{
    BoundRow, Buffer1Report, Buffer1Row, Buffer2Report, MassRow, TableCell, TablesReport,
};

pub fn analyze_buffer1(cfg: &RunConfig) -> Result<Buffer1Report, CliError> {
    let st = StationaryBuffer1::solve_with_tol(&cfg.model, cfg.analysis.tol)?;
    let masses = st.masses().into_iter().map(|(s, mass)| MassRow { state: s.to_string(), mass }).collect();
    let rows = cfg
        .x_grid()
        .into_iter()
        .map(|x| {
            let density = match st.density(x) {
                Ok(d) => Some(d.iter().copied().collect()),
                Err(FluidError::AtBoundary(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(Buffer1Row { x, tail: st.tail(x)?, density })
        })
        .collect::<Result<Vec<_>, FluidError>>()?;
    Ok(Buffer1Report { kappa: st.kappa, total_probability: st.total_probability(), masses, rows })
}

pub fn bounds_buffer2(cfg: &RunConfig) -> Result<Buffer2Report, CliError> {
    let mut opts = Buffer2Options { tol: cfg.analysis.tol, ..Buffer2Options::default() };
    if let Some(n) = cfg.analysis.grid_points {
        opts.grid_points = n;
    }
    let b = Buffer2Bounds::compute(&cfg.model, &opts)?;
    let p = &cfg.model;
    let residual = b.eb_c + p.n as f64 * b.eb_e - p.c();
    let rows = cfg
        .y_grid()
        .into_iter()
        .map(|y| {
            let (lower, upper) = b.tail_bounds(y);
            BoundRow { y, eta: b.eta, lower, upper }
        })
        .collect();
    Ok(Buffer2Report {
        eta: b.eta,
        residual,
        eb_c: b.eb_c,
        eb_e: b.eb_e,
        chi: b.chi,
        h_c: b.h_c,
        prefactor: b.prefactor,
        k_lower: b.k_lower,
        k_upper: b.k_upper,
        rows,
    })
}

pub fn run_simulation(cfg: &RunConfig) -> Result<SimEstimate, CliError> {
    Ok(simulate(&cfg.model, &cfg.sim_config())?)
}

pub const TABLE_TOL: f64 = 5e-4;

/// Published tails per scenario, for V = ∞, 3.5, 6 and 20.
const PUBLISHED: [(&str, [f64; 4], [f64; 4]); 3] = [
    ("A", [0.1706, 0.1411, 0.1660, 0.1706], [0.0572, 0.0237, 0.0519, 0.0572]),
    ("E", [0.1942, 0.1615, 0.1891, 0.1942], [0.0651, 0.0271, 0.0592, 0.0651]),
    ("F", [0.3501, 0.3009, 0.3426, 0.3501], [0.1173, 0.0505, 0.1072, 0.1173]),
];
const CAPACITIES: [Option<f64>; 4] = [None, Some(3.5), Some(6.0), Some(20.0)];

fn scenario(name: &str) -> ModelParams {
    match name {
        "A" => ModelParams::scenario_a(),
        "E" => ModelParams::scenario_e(),
        _ => ModelParams::scenario_f(),
    }
}

/// Both tables; cells whose pipeline fails are reported and left empty.
pub fn reproduce_tables(tol: f64) -> TablesReport {
    let mut cells = Vec::new();
    for (name, at_star, at_three) in PUBLISHED {
        for (k, v) in CAPACITIES.into_iter().enumerate() {
            let p = scenario(name).with_capacity(v);
            let solved = StationaryBuffer1::solve_with_tol(&p, tol);
            if let Err(e) = &solved {
                log::error!("scenario {name}, V = {v:?}: {e}");
            }
            for (quantity, level, published) in [("x*", p.x_star, at_star[k]), ("3", 3.0, at_three[k])] {
                let computed = solved.as_ref().ok().and_then(|st| match st.tail(level) {
                    Ok(t) => Some(t),
                    Err(e) => {
                        log::error!("scenario {name}, V = {v:?}, tail at {level}: {e}");
                        None
                    }
                });
                // compare at the printed precision
                let flagged = computed.is_none_or(|c| ((c * 1e4).round() / 1e4 - published).abs() > TABLE_TOL + 1e-12);
                cells.push(TableCell { quantity: quantity.into(), scenario: name.into(), v, computed, published, flagged });
            }
        }
    }
    cells.sort_by_key(|c| c.quantity != "x*");
    TablesReport { cells }
}
