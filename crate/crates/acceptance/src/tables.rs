//! Published dataset and threshold-sweep tables.

/// (period s, label counts 2/1/0, train/val/test sizes)
pub const SPLIT_TABLE: [(u32, [usize; 3], [usize; 3]); 5] = [
    (3, [1711, 128, 1592], [2058, 686, 687]),
    (5, [1689, 127, 1553], [2021, 674, 674]),
    (10, [1634, 122, 1458], [1928, 643, 643]),
    (15, [1579, 117, 1363], [1835, 612, 612]),
    (20, [1524, 111, 1269], [1742, 581, 581]),
];

pub const THRESHOLD_SWEEP_TSV: &str = include_str!("../data/threshold_sweep.tsv");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepLine {
    pub index: usize,
    pub incident_threshold: f64,
    pub normal_threshold: f64,
    pub accuracy: f64,
    pub correct: usize,
}

/// Rows of the reference threshold sweep, in file order.
pub fn threshold_sweep() -> Vec<SweepLine> {
    THRESHOLD_SWEEP_TSV
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            SweepLine {
                index: f[0].parse().unwrap(),
                incident_threshold: f[1].parse().unwrap(),
                normal_threshold: f[2].parse().unwrap(),
                accuracy: f[3].parse().unwrap(),
                correct: f[4].parse().unwrap(),
            }
        })
        .collect()
}

pub fn sweep_header() -> Vec<&'static str> {
    THRESHOLD_SWEEP_TSV.lines().next().unwrap().split('\t').collect()
}
