//! Packaged study presets.
//!
//! The `*-small` presets are desk-scale analogues of the headline figures:
//! same pipeline and metrics, scaled-down tensors and bit budgets, and a
//! different sub-constellation family and CPD solver than the original
//! study, so absolute error rates are expected to differ. The `*-full`
//! presets encode the full-scale configurations; they are packaged for
//! completeness and can take hours per point.

use crate::config::{Bag, CliError, CliResult};

pub const PRESET_NAMES: &[&str] = &[
    "fig1",
    "fig3-small",
    "fig4-small",
    "fig5-small",
    "fig3-full-64x50",
    "fig3-full-8x5x5x4x4",
    "fig5-full-64x50",
];

pub fn preset(name: &str) -> CliResult<Bag> {
    let mut b = Bag::default();
    match name {
        // sum-DoF curves for T = 3200, N = 50 and both factorizations
        "fig1" => {
            b.set("shapes", "64,50;8,5,5,4,4");
            b.set("antennas", "50");
        }
        // MER vs number of active users, desk scale
        "fig3-small" => {
            b.set("dims", "8,5,4");
            b.set("antennas", "8");
            b.set("payload-bits", "30");
            b.set("bch", "false");
            b.set("ka", "2,4,6,8,10,12");
            b.set("ebn0-db", "10");
            b.set("trials", "200");
            b.set("metric", "mer");
        }
        // minimum E_b/N_0 reaching PUPE <= 0.1, desk scale
        "fig4-small" => {
            b.set("dims", "8,5,4");
            b.set("antennas", "8");
            b.set("payload-bits", "30");
            b.set("bch", "false");
            b.set("ka", "2,4,6");
            b.set("mode", "min-ebn0");
            b.set("pupe-target", "0.1");
            b.set("ebn0-grid", "0,2.5,5,7.5,10,12.5,15");
            b.set("trials", "200");
        }
        // sourced packet error rate vs E_b/N_0, desk scale
        "fig5-small" => {
            b.set("dims", "8,5,4");
            b.set("antennas", "8");
            b.set("payload-bits", "20");
            b.set("id-bits", "6");
            b.set("bch", "true");
            b.set("ka", "4");
            b.set("ebn0-db", "0,4,8,12,16,20");
            b.set("trials", "200");
            b.set("metric", "per");
        }
        // full-scale unsourced MER sweeps (long runs)
        "fig3-full-64x50" => {
            b.set("dims", "64,50");
            b.set("antennas", "50");
            b.set("payload-bits", "96");
            b.set("bch", "true");
            b.set("ka", "50,100,200,300,400,500,600,650");
            b.set("ebn0-db", "0");
            b.set("trials", "100");
            b.set("metric", "mer");
        }
        "fig3-full-8x5x5x4x4" => {
            b.set("dims", "8,5,5,4,4");
            b.set("antennas", "50");
            b.set("payload-bits", "96");
            b.set("bch", "true");
            b.set("bit-split", "37,21,21,16,15");
            b.set("ka", "50,100,200,300,400,500,600,650");
            b.set("ebn0-db", "0");
            b.set("trials", "100");
            b.set("metric", "mer");
        }
        // full-scale sourced PER vs E_b/N_0
        "fig5-full-64x50" => {
            b.set("dims", "64,50");
            b.set("antennas", "50");
            b.set("payload-bits", "96");
            b.set("id-bits", "13");
            b.set("bch", "true");
            b.set("ka", "100");
            b.set("ebn0-db", "-4,-2,0,2,4,6,8");
            b.set("trials", "50");
            b.set("metric", "per");
        }
        other => {
            return Err(CliError(format!(
                "unknown preset `{other}` (available: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    }
    Ok(b)
}
