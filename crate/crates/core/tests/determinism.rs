use spinfringe::{parse_config, run_scenario, RunManifest, RunOptions};

// 3 nm packet on a three-slit 16 nm grating, small enough for a few seconds per run
const TOY: &str = r#"
scenario = "husimi_sweep"
variant = "fast"
[grid]
downstream = "30 nm"
[packet]
sigma_x = "3 nm"
sigma_y = "12 nm"
approach = "12 nm"
[grating]
period = "16 nm"
thickness = "8 nm"
n_slits = 3
[sweep]
l_b2 = ["10 m", "20 m"]
[output]
field_dumps = true
"#;

fn run(threads: usize) -> (RunManifest, Vec<(String, Vec<u8>)>) {
    let cfg = parse_config(TOY).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(
        &cfg,
        &RunOptions {
            out_dir: dir.path().into(),
            threads: Some(threads),
        },
    )
    .unwrap();
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    (out.manifest, files)
}

#[test]
fn identical_configs_reproduce_identical_outputs() {
    let (mut a, files_a) = run(1);
    let (mut b, files_b) = run(1);
    a.wall_clock_s = 0.0;
    b.wall_clock_s = 0.0;
    assert_eq!(a, b);
    assert!(!a.outputs.is_empty());
    let names: Vec<&str> = files_a.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["manifest.json", "profile.csv", "husimi_up.f64", "husimi_sweep.csv", "bz_self_post.f64"] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    for ((na, ba), (nb, bb)) in files_a.iter().zip(&files_b) {
        assert_eq!(na, nb);
        if na != "manifest.json" {
            assert_eq!(ba, bb, "{na} differs between runs");
        }
    }
    // the run reached the snapshot and produced every sweep point
    assert_eq!(a.snapshots.len(), 3);
    assert_eq!(a.metrics.husimi_sweep.len(), 2);
    assert!(a.metrics.transmission.is_some());
}

#[test]
fn checksums_track_output_bytes() {
    let (m, files) = run(1);
    for entry in &m.outputs {
        let (_, bytes) = files.iter().find(|(n, _)| n == &entry.file).unwrap();
        assert_eq!(entry.bytes as usize, bytes.len());
        assert_eq!(entry.sha256, spinfringe::scenario::io::sha256_hex(bytes));
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 1;
        assert_ne!(entry.sha256, spinfringe::scenario::io::sha256_hex(&flipped));
    }
}
