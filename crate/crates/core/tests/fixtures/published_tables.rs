//! Confusion matrices and per-class results of the two published Sleep-EDF-13
//! evaluations (Fpz-Cz and Pz-Oz), transcribed cell by cell. Rows are the
//! expert label, columns the prediction, both in W, N1, N2, N3, REM order.

#![allow(dead_code)]

pub struct PublishedTable {
    pub name: &'static str,
    pub counts: [[u64; 5]; 5],
    /// precision, recall, specificity, F1 per class, in percent.
    pub per_class: [[f64; 4]; 5],
    pub accuracy: f64,
    pub macro_f1: f64,
    pub kappa: f64,
}

pub const FPZ_CZ: PublishedTable = PublishedTable {
    name: "Fpz-Cz",
    counts: [
        [7161, 432, 67, 27, 219],
        [442, 1486, 364, 25, 409],
        [359, 735, 14187, 1035, 837],
        [37, 9, 560, 4857, 2],
        [153, 307, 368, 2, 6520],
    ],
    per_class: [
        [87.84, 90.58, 96.97, 89.19],
        [50.05, 54.51, 96.08, 52.19],
        [91.26, 82.71, 94.20, 86.77],
        [81.69, 88.87, 96.90, 85.13],
        [81.63, 88.71, 95.59, 85.02],
    ],
    accuracy: 84.26,
    macro_f1: 79.66,
    kappa: 0.79,
};

pub const PZ_OZ: PublishedTable = PublishedTable {
    name: "Pz-Oz",
    counts: [
        [7094, 398, 82, 41, 238],
        [539, 1167, 455, 29, 492],
        [114, 655, 14220, 1157, 971],
        [17, 12, 791, 4658, 10],
        [100, 314, 506, 50, 6489],
    ],
    per_class: [
        [90.20, 90.33, 97.65, 90.27],
        [45.84, 43.51, 96.36, 44.64],
        [88.58, 83.07, 92.19, 85.74],
        [78.48, 84.88, 96.36, 81.55],
        [79.13, 87.00, 94.84, 82.88],
    ],
    accuracy: 82.83,
    macro_f1: 77.02,
    kappa: 0.77,
};

/// Published per-class metrics are rounded to two decimals, kappa to two.
pub const METRIC_TOLERANCE: f64 = 0.01;
pub const KAPPA_TOLERANCE: f64 = 0.005;
