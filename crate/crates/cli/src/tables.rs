//! Batch reproduction of the published reference tables, with PASS/FAIL
//! scoring against embedded reference values.

use wnrma_core::binary_image::{self, BinaryImageConfig};
use wnrma_core::bounds;
use wnrma_core::enumerators::EnsembleParams;
use wnrma_core::exitsim::{self, AprioriModel, McBudget, WeighterMode};
use wnrma_core::spectra::{self, SpectralConfig};

/// One scored cell of a reproduction run.
#[derive(Debug, Clone)]
pub struct TableCell {
    pub label: String,
    pub computed: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub note: &'static str,
}

pub struct TableReport {
    pub name: &'static str,
    pub cells: Vec<TableCell>,
}

impl TableReport {
    pub fn all_pass(&self) -> bool {
        self.cells.iter().all(|c| c.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cell,computed,reference,tolerance,status,note\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{:.6},{:.6},{},{},{}\n",
                c.label,
                c.computed,
                c.reference,
                c.tolerance,
                if c.pass { "PASS" } else { "FAIL" },
                c.note
            ));
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "table": self.name,
            "all_pass": self.all_pass(),
            "cells": self.cells.iter().map(|c| serde_json::json!({
                "cell": c.label,
                "computed": c.computed,
                "reference": c.reference,
                "tolerance": c.tolerance,
                "status": if c.pass { "PASS" } else { "FAIL" },
                "note": c.note,
            })).collect::<Vec<_>>(),
        })
    }
}

fn score(label: String, computed: f64, reference: f64, tolerance: f64, note: &'static str) -> TableCell {
    TableCell {
        pass: (computed - reference).abs() <= tolerance,
        label,
        computed,
        reference,
        tolerance,
        note,
    }
}

const NS: [u32; 3] = [3, 5, 10];
const QS_NONBINARY: [u32; 4] = [4, 8, 16, 32];
const QS_BINARY: [u32; 5] = [2, 4, 8, 16, 32];

/// Growth rate coefficients, two accumulators (reference cells
/// `table:I cell:(n,q)`), with the nonbinary GVB parentheticals.
pub const TABLE_I: [[f64; 4]; 3] = [
    [0.2360, 0.3107, 0.3609, 0.3912],
    [0.3820, 0.4840, 0.5518, 0.5967],
    [0.5026, 0.6192, 0.6930, 0.7413],
];
pub const TABLE_I_GVB: [[f64; 4]; 3] = [
    [0.2917, 0.3730, 0.4302, 0.4715],
    [0.3977, 0.4987, 0.5664, 0.6131],
    [0.5048, 0.6207, 0.6940, 0.7421],
];

/// Growth rate coefficients, three accumulators.
pub const TABLE_II: [[f64; 4]; 3] = [
    [0.2911, 0.3725, 0.4299, 0.4712],
    [0.3977, 0.4987, 0.5664, 0.6131],
    [0.5048, 0.6207, 0.6940, 0.7421],
];

/// Binary-image growth rates, two accumulators, plus the binary GVB column.
pub const TABLE_III: [[f64; 5]; 3] = [
    [0.1323, 0.1496, 0.1608, 0.1675, 0.1712],
    [0.2286, 0.2380, 0.2416, 0.2427, 0.2429],
    [0.3133, 0.3155, 0.3159, 0.3160, 0.3160],
];
pub const TABLE_III_GVB: [f64; 3] = [0.1740, 0.2430, 0.3160];

/// Binary-image growth rates, three accumulators.
pub const TABLE_IV: [[f64; 5]; 3] = [
    [0.1731, 0.1738, 0.1739, 0.1739, 0.1740],
    [0.2430, 0.2430, 0.2430, 0.2430, 0.2430],
    [0.3160, 0.3160, 0.3160, 0.3160, 0.3160],
];

/// ML-threshold bounds (dB), two accumulators. The q=8, n=5 entry is printed
/// as "-0953" in the source table; it is scored against -0.953.
pub const TABLE_V: [[f64; 5]; 3] = [
    [-0.437, -0.449, -0.453, -0.453, -0.453],
    [-0.952, -0.953, -0.953, -0.953, -0.953],
    [-1.284, -1.284, -1.284, -1.284, -1.284],
];
pub const TABLE_V_CAP: [f64; 3] = [-0.495, -0.964, -1.286];

/// ML-threshold bounds (dB), three accumulators (same typo cell as above).
pub const TABLE_VI: [[f64; 5]; 3] = [
    [-0.453, -0.453, -0.453, -0.453, -0.453],
    [-0.953, -0.953, -0.953, -0.953, -0.953],
    [-1.284, -1.284, -1.284, -1.284, -1.284],
];

/// Iterative-decoding thresholds on the QSC, two accumulators, with the
/// capacity parentheticals.
pub const TABLE_VII: [[f64; 4]; 3] = [
    [0.228, 0.290, 0.335, 0.374],
    [0.263, 0.333, 0.382, 0.412],
    [0.306, 0.379, 0.424, 0.459],
];
pub const TABLE_VII_CAP: [[f64; 4]; 3] = [
    [0.292, 0.373, 0.430, 0.471],
    [0.398, 0.499, 0.566, 0.613],
    [0.505, 0.621, 0.694, 0.742],
];

fn row_filter(rows: Option<u32>) -> Vec<usize> {
    match rows {
        Some(n) => NS.iter().position(|&x| x == n).map(|i| vec![i]).unwrap_or_default(),
        None => vec![0, 1, 2],
    }
}

/// Tables I/II: rho0 for every (n, q) cell plus the GVB parentheticals.
pub fn run_growth_table(l: u32, rows: Option<u32>) -> TableReport {
    let name = if l == 2 { "I" } else { "II" };
    let mut cells = Vec::new();
    for ri in row_filter(rows) {
        let n = NS[ri];
        for (qi, &q) in QS_NONBINARY.iter().enumerate() {
            let config = SpectralConfig::new(q, n, l).unwrap();
            let g = spectra::rho0(&config);
            let reference = if l == 2 { TABLE_I[ri][qi] } else { TABLE_II[ri][qi] };
            cells.push(score(
                format!("rho0(n={n},q={q})"),
                g.rho0,
                reference,
                5e-4,
                "",
            ));
            let gvb = bounds::gvb_nonbinary(1.0 / n as f64, q).unwrap();
            cells.push(score(
                format!("gvb(n={n},q={q})"),
                gvb,
                TABLE_I_GVB[ri][qi],
                1e-4,
                "",
            ));
        }
    }
    TableReport { name, cells }
}

/// Tables III/IV: binary-image delta0 for every (n, q) cell plus the binary
/// GVB column.
pub fn run_binary_growth_table(l: u32, rows: Option<u32>) -> TableReport {
    let name = if l == 2 { "III" } else { "IV" };
    let mut cells = Vec::new();
    for ri in row_filter(rows) {
        let n = NS[ri];
        for (qi, &q) in QS_BINARY.iter().enumerate() {
            let base = SpectralConfig::new(q, n, l).unwrap();
            let config = BinaryImageConfig::new(base).unwrap();
            let ev = spectra::shared_evaluator(&base);
            let g = binary_image::delta0(&config, &|rho| ev.eval(rho));
            let reference = if l == 2 { TABLE_III[ri][qi] } else { TABLE_IV[ri][qi] };
            cells.push(score(
                format!("delta0(n={n},q={q})"),
                g.rho0,
                reference,
                5e-4,
                "",
            ));
        }
        let gvb = bounds::gvb_binary(1.0 / n as f64).unwrap();
        cells.push(score(
            format!("gvb_binary(n={n})"),
            gvb,
            TABLE_III_GVB[ri],
            1e-4,
            "",
        ));
    }
    TableReport { name, cells }
}

/// Binary spectral shape curve on a delta grid, for the ML-threshold bound.
pub fn binary_shape_curve(q: u32, n: u32, l: u32, step: f64) -> Vec<(f64, f64)> {
    let base = SpectralConfig::new(q, n, l).unwrap();
    let ev = spectra::shared_evaluator(&base);
    if q == 2 {
        let mut out = Vec::new();
        let mut d = step;
        while d < 1.0 {
            out.push((d, ev.eval(d)));
            d += step;
        }
        return out;
    }
    let config = BinaryImageConfig::new(base).unwrap();
    let shape = |rho: f64| ev.eval(rho);
    let mut out = Vec::new();
    let mut d = step;
    while d < 1.0 {
        out.push((d, binary_image::binary_spectral_shape(&config, d, &shape).r_b));
        d += step;
    }
    out
}

/// Tables V/VI: Divsalar ML-threshold bounds for the binary images, plus the
/// Shannon-limit capacity column.
pub fn run_ml_threshold_table(l: u32, rows: Option<u32>) -> TableReport {
    let name = if l == 2 { "V" } else { "VI" };
    let mut cells = Vec::new();
    for ri in row_filter(rows) {
        let n = NS[ri];
        let rate = 1.0 / n as f64;
        for (qi, &q) in QS_BINARY.iter().enumerate() {
            let curve = binary_shape_curve(q, n, l, 1e-3);
            let bound = bounds::divsalar_threshold(&curve, rate).unwrap();
            let reference = if l == 2 { TABLE_V[ri][qi] } else { TABLE_VI[ri][qi] };
            let note = if n == 5 && q == 8 {
                "printed as -0953 in the source; scored against -0.953"
            } else {
                ""
            };
            cells.push(score(
                format!("divsalar(n={n},q={q})"),
                bound.ebn0_db,
                reference,
                5e-3,
                note,
            ));
        }
        let cap = bounds::awgn_shannon_limit(rate).unwrap();
        cells.push(score(
            format!("shannon(n={n})"),
            cap,
            TABLE_V_CAP[ri],
            5e-3,
            "",
        ));
    }
    TableReport { name, cells }
}

/// Table VII: EXIT thresholds on the QSC with the capacity parentheticals.
/// Monte-Carlo; the a-priori model is part of the record.
pub fn run_exit_table(
    rows: Option<u32>,
    mc: &McBudget,
    seed: u64,
    model: AprioriModel,
    tolerance: f64,
) -> TableReport {
    let mut cells = Vec::new();
    for ri in row_filter(rows) {
        let n = NS[ri];
        for (qi, &q) in QS_NONBINARY.iter().enumerate() {
            let params = EnsembleParams::new(q, n, 2, 4).unwrap();
            let t = exitsim::threshold_qsc(&params, mc, seed, model, WeighterMode::Random)
                .unwrap();
            cells.push(score(
                format!("p_star(n={n},q={q})"),
                t.p_star,
                TABLE_VII[ri][qi],
                tolerance,
                "MC EXIT threshold; a-priori model in the JSON record",
            ));
            let cap = bounds::qsc_capacity_inverse(1.0 / n as f64, q).unwrap();
            cells.push(score(
                format!("capacity_p(n={n},q={q})"),
                cap,
                TABLE_VII_CAP[ri][qi],
                1e-3,
                "",
            ));
        }
    }
    TableReport {
        name: "VII",
        cells,
    }
}
