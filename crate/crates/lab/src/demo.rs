//! Distance-metric comparison table: a schedule of distribution pairs on
//! which total variation stays flat while the Jensen-Shannon distance keeps
//! moving, the smoothness argument for preferring JSD as the diversity
//! distance on discrete policies.

use std::fmt::Write as _;

use hypermarl_core::diag::{jsd_distance, tvd};

use crate::fmt::sig6;

pub const DEMO_P: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoRow {
    pub t: usize,
    pub q: [f64; 3],
    pub tvd: f64,
    pub jsd: f64,
}

/// Fixed `p = (0.6, 0.2, 0.2)` against `q_t = (0.1, 0.45 + 0.05 t,
/// 0.45 - 0.05 t)`: while both tail events stay above p's mass, shifting
/// mass between them leaves TVD constant but JSD strictly increases.
pub fn distance_schedule() -> Vec<DemoRow> {
    (0..=7)
        .map(|t| {
            let q = [0.1, 0.45 + 0.05 * t as f64, 0.45 - 0.05 * t as f64];
            DemoRow {
                t,
                q,
                tvd: tvd(&DEMO_P, &q),
                jsd: jsd_distance(&DEMO_P, &q),
            }
        })
        .collect()
}

pub fn demo_csv() -> String {
    let mut out = String::from("t,q0,q1,q2,tvd,jsd\n");
    for row in distance_schedule() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.t,
            sig6(row.q[0]),
            sig6(row.q[1]),
            sig6(row.q[2]),
            sig6(row.tvd),
            sig6(row.jsd)
        )
        .expect("string write");
    }
    out
}
