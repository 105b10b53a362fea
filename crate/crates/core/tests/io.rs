use specpart::analysis::half_disk_labels;
use specpart::io::*;
use specpart::mesh::{build_disk_mesh, build_square_mesh};
use specpart::optimizer::{RunTrace, StageRecord};

#[test]
fn vtk_has_legacy_layout() {
    let mesh = build_square_mesh(3).unwrap();
    let values: Vec<f64> = (0..mesh.n_vertices()).map(|v| v as f64 * 0.5).collect();
    let text = vtk_string(&mesh, "unit square\nsecond line dropped", &[("my field", &values)]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# vtk DataFile Version 3.0");
    assert_eq!(lines[1], "unit square");
    assert_eq!(lines[2], "ASCII");
    assert_eq!(lines[3], "DATASET UNSTRUCTURED_GRID");
    assert_eq!(lines[4], format!("POINTS {} double", mesh.n_vertices()));
    let cells = 5 + mesh.n_vertices();
    assert_eq!(lines[cells], format!("CELLS {} {}", mesh.n_triangles(), 4 * mesh.n_triangles()));
    let types = cells + 1 + mesh.n_triangles();
    assert_eq!(lines[types], format!("CELL_TYPES {}", mesh.n_triangles()));
    assert!(lines[types + 1..=types + mesh.n_triangles()].iter().all(|l| *l == "5"));
    let data = types + 1 + mesh.n_triangles();
    assert_eq!(lines[data], format!("POINT_DATA {}", mesh.n_vertices()));
    assert_eq!(lines[data + 1], "SCALARS my_field double 1");
    assert_eq!(lines[data + 2], "LOOKUP_TABLE default");
    let parsed: Vec<f64> = lines[data + 3..].iter().map(|l| l.parse().unwrap()).collect();
    assert_eq!(parsed, values);
}

#[test]
fn trace_csv_round_trips() {
    let trace = RunTrace {
        stages: vec![
            StageRecord { stage: 0, beta: 10.0, energy: 1.0 / 3.0, penalty: 0.125, grad_norm: 1e-9, iterations: 7 },
            StageRecord { stage: 1, beta: 40.0, energy: 2.5, penalty: 1e-300, grad_norm: 0.0, iterations: 1 },
        ],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    write_trace_csv(&path, &trace).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["stage", "beta", "energy", "penalty", "grad_norm", "iterations"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for (row, rec) in rows.iter().zip(&trace.stages) {
        assert_eq!(row[0].parse::<usize>().unwrap(), rec.stage);
        assert_eq!(row[2].parse::<f64>().unwrap(), rec.energy);
        assert_eq!(row[3].parse::<f64>().unwrap(), rec.penalty);
        assert_eq!(row[5].parse::<usize>().unwrap(), rec.iterations);
    }
}

#[test]
fn pgm_raster_shows_both_halves() {
    let mesh = build_disk_mesh(12).unwrap();
    let labels = half_disk_labels(&mesh, 0.0);
    let (w, h, px) = partition_raster(&mesh, &labels, 2, 64);
    assert_eq!((w, h), (64, 64));
    let text = pgm_string(w, h, &px);
    let mut tokens = text.split_whitespace();
    assert_eq!(tokens.next(), Some("P2"));
    assert_eq!(tokens.next(), Some("64"));
    assert_eq!(tokens.next(), Some("64"));
    assert_eq!(tokens.next(), Some("255"));
    let values: Vec<u8> = tokens.map(|t| t.parse().unwrap()).collect();
    assert_eq!(values, px);
    // corners lie outside the disk, left and right of the center belong to different groups
    assert_eq!(px[0], 255);
    let row = 32 * w;
    assert_ne!(px[row + 8], px[row + 56]);
    assert!(px[row + 8] != 255 && px[row + 56] != 255);
}

#[test]
fn labels_round_trip() {
    let labels = vec![Some(0), None, Some(3), Some(1), None];
    assert_eq!(labels_from_str(&labels_to_string(&labels)).unwrap(), labels);
    assert!(labels_from_str("1\nx\n").is_err());
    assert_eq!(label_values(&labels), vec![0.0, -1.0, 3.0, 1.0, -1.0]);
}
