//! Regression anchors: the figure-2 and figure-3 presets must keep producing
//! the stored partitions.

use specpart::analysis::partition_distance;
use specpart::config::preset;
use specpart::io::labels_from_str;
use specpart::run::execute;

fn matches_golden(name: &str, golden: &str) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset(name).unwrap();
    cfg.output = dir.path().to_path_buf();
    let outcome = execute(&cfg).unwrap();
    let stored = labels_from_str(golden).unwrap();
    let disc = &outcome.discretization;
    assert_eq!(stored.len(), disc.n_vertices());
    let m = cfg.partition.len();
    let d = partition_distance(&outcome.report.labels, &stored, m, disc) / disc.mesh.total_area();
    assert!(d <= 0.02, "{name}: {:.2}% of the area moved", 100.0 * d);
}

#[test]
fn figure_2_center_and_lobes() {
    matches_golden("figure-2", include_str!("golden/figure-2.labels"));
}

#[test]
fn figure_3_sectors() {
    matches_golden("figure-3", include_str!("golden/figure-3.labels"));
}
