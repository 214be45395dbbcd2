use std::fs;

use djlab_core::io::{load_dataset, read_split, read_webkb, split_files, write_split, DatasetPaths};
use djlab_core::SplitMasks;

#[test]
fn dataset_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("g.txt"), "0 1\n1 2\n2 3\n").unwrap();
    fs::write(d.join("y.csv"), "0\n0\n1\n1\n").unwrap();
    fs::write(d.join("x.csv"), "1,0\n0.5,0.5\n0,1\n0.25,0.75\n").unwrap();
    let split = SplitMasks::new(
        vec![true, false, true, false],
        vec![false, true, false, false],
        vec![false, false, false, true],
    )
    .unwrap();
    fs::create_dir(d.join("splits")).unwrap();
    write_split(&split, &d.join("splits/split_0.csv")).unwrap();
    write_split(&split, &d.join("splits/split_1.csv")).unwrap();
    let paths = DatasetPaths {
        graph: d.join("g.txt"),
        features: Some(d.join("x.csv")),
        labels: d.join("y.csv"),
        splits: Some(d.join("splits")),
    };
    let ds = load_dataset(&paths).unwrap();
    assert_eq!(ds.graph.m(), 3);
    assert_eq!(ds.features.width(), 2);
    assert_eq!(ds.splits.len(), 2);
    assert_eq!(ds.splits[0], split);
    assert_eq!(read_split(&split_files(&d.join("splits")).unwrap()[1]).unwrap(), split);

    fs::write(d.join("x.csv"), "1,0\n0,1\n").unwrap();
    let e = load_dataset(&paths).unwrap_err();
    assert!(e.to_string().contains("x.csv"), "{e}");
}

#[test]
fn webkb_layout_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("out1_node_feature_label.txt"),
        "node_id\tfeature\tlabel\n1\t0,1,0\t2\n0\t1,0,0\t0\n2\t0,0,1\t1\n",
    )
    .unwrap();
    fs::write(d.join("out1_graph_edges.txt"), "node_id\tnode_id\n0\t1\n1\t0\n1\t2\n2\t2\n").unwrap();
    let (g, x, y) = read_webkb(d).unwrap();
    assert_eq!(g.n(), 3);
    assert_eq!(g.m(), 2);
    assert_eq!(x.as_array()[[1, 1]], 1.0);
    assert_eq!(y.as_slice(), &[0, 2, 1]);
}
