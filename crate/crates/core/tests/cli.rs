use std::path::Path;
use std::process::{Command, Output};

use aeseg::field::{read_field, read_image, write_image, ScalarField};
use serde_json::Value;

fn aeseg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aeseg"))
        .args(args)
        .current_dir(cwd)
        .env_remove("AES_THREADS")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr carries a JSON error")
}

#[test]
fn phantom_then_eigs_writes_ascending_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = aeseg(
        &[
            "phantom",
            "--kind",
            "profile1d",
            "--n",
            "1001",
            "--out-dir",
            "p",
        ],
        d,
    );
    assert!(out.status.success());
    assert!(d.join("p/manifest.json").exists());
    let out = aeseg(
        &[
            "eigs",
            "--input",
            "p/phantom.pfm",
            "--k",
            "8",
            "--out-dir",
            "e",
        ],
        d,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for i in 1..=8 {
        let phi = read_field(d.join(format!("e/phi_{i:04}.pfm"))).unwrap();
        assert_eq!((phi.width(), phi.height()), (1001, 1));
    }
    assert!(!d.join("e/phi_0009.pfm").exists());
    let spec = json(&d.join("e/spectrum.json"));
    let lams: Vec<f64> = spec["eigenvalues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(lams.len(), 8);
    assert!(lams[0] > 0.0 && lams.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(spec["k"], 8);
    assert_eq!(spec["weight_law"], "lorentzian");
    assert!(spec["residuals"]
        .as_array()
        .unwrap()
        .iter()
        .all(|r| r.as_f64().unwrap() <= 1e-8));
    let manifest = json(&d.join("e/manifest.json"));
    assert_eq!(manifest["command"], "eigs");
    assert!(manifest["gamma"].as_f64().unwrap() > 0.0);
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 9);
}

#[test]
fn oracle_check_passes_on_a_small_phantom() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(aeseg(
        &[
            "phantom",
            "--kind",
            "two_disks",
            "--n",
            "32",
            "--out-dir",
            "p"
        ],
        d
    )
    .status
    .success());
    let out = aeseg(
        &["oracle-check", "--input", "p/phantom.pgm", "--k", "10"],
        d,
    );
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["max_relative_deviation"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn denoise_with_no_terms_and_zero_boundary_is_black() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(aeseg(
        &[
            "phantom",
            "--kind",
            "blob_with_blur",
            "--n",
            "24",
            "--blur",
            "0.1",
            "--out-dir",
            "p"
        ],
        d
    )
    .status
    .success());
    let out = aeseg(
        &[
            "denoise",
            "--input",
            "p/phantom.pgm",
            "--k",
            "4",
            "--K",
            "0",
            "--zero-boundary",
            "--out",
            "o/den.pgm",
        ],
        d,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let img = read_image(d.join("o/den.pgm")).unwrap();
    assert!(img.values().iter().all(|&v| v == 0.0));
    assert!(read_field(d.join("o/den.pfm"))
        .unwrap()
        .values()
        .iter()
        .all(|&v| v == 0.0));
    assert_eq!(json(&d.join("o/den.manifest.json"))["K"], 0);
}

#[test]
fn segment_writes_one_mask_per_index() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(aeseg(
        &[
            "phantom",
            "--kind",
            "two_disks",
            "--n",
            "40",
            "--out-dir",
            "p"
        ],
        d
    )
    .status
    .success());
    let out = aeseg(
        &[
            "segment",
            "--input",
            "p/phantom.pgm",
            "--indices",
            "1,2",
            "--threshold",
            "fixed:0.5",
            "--out-dir",
            "s",
        ],
        d,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for i in [1, 2] {
        let m = read_image(d.join(format!("s/mask_{i:04}.pgm"))).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(m.values().contains(&1.0));
    }
    assert!(!d.join("s/mask_0003.pgm").exists());
    let manifest = json(&d.join("s/manifest.json"));
    assert_eq!(manifest["config"]["threshold"], "fixed:0.5");
}

#[test]
fn roi_mask_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(aeseg(
        &[
            "phantom",
            "--kind",
            "two_disks",
            "--n",
            "40",
            "--out-dir",
            "p"
        ],
        d
    )
    .status
    .success());
    let roi = ScalarField::from_fn(40, 40, |x, _| if x < 0.6 { 1.0 } else { 0.0 }).unwrap();
    write_image(&roi, d.join("roi.pgm")).unwrap();
    let out = aeseg(
        &[
            "segment",
            "--input",
            "p/phantom.pgm",
            "--mask",
            "roi.pgm",
            "--k",
            "3",
            "--out-dir",
            "s",
        ],
        d,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m = read_image(d.join("s/mask_0001.pgm")).unwrap();
    for (v, r) in m.values().iter().zip(roi.values()) {
        if *r == 0.0 {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn add_noise_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(aeseg(
        &[
            "phantom",
            "--kind",
            "two_disks",
            "--n",
            "30",
            "--out-dir",
            "p"
        ],
        d
    )
    .status
    .success());
    for name in ["a.pfm", "b.pfm"] {
        let out = aeseg(
            &[
                "add-noise",
                "--input",
                "p/phantom.pfm",
                "--delta",
                "0.2",
                "--dist",
                "gaussian",
                "--seed",
                "5",
                "--out",
                name,
            ],
            d,
        );
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(d.join("a.pfm")).unwrap(),
        std::fs::read(d.join("b.pfm")).unwrap()
    );
}

#[test]
fn single_and_multi_threaded_outputs_match() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(aeseg(
        &[
            "phantom",
            "--kind",
            "two_disks",
            "--n",
            "140",
            "--out-dir",
            "p"
        ],
        d
    )
    .status
    .success());
    for (threads, out_dir) in [("1", "e1"), ("4", "e4")] {
        let out = aeseg(
            &[
                "--threads",
                threads,
                "eigs",
                "--input",
                "p/phantom.pgm",
                "--k",
                "3",
                "--out-dir",
                out_dir,
            ],
            d,
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for f in ["phi_0001.pfm", "phi_0003.pfm", "spectrum.json"] {
        assert_eq!(
            std::fs::read(d.join("e1").join(f)).unwrap(),
            std::fs::read(d.join("e4").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = aeseg(
        &["eigs", "--input", "x.pgm", "--out-dir", "e", "--frobnicate"],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "usage");

    std::fs::write(d.join("deep.pgm"), b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0").unwrap();
    let out = aeseg(&["eigs", "--input", "deep.pgm", "--out-dir", "e"], d);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "parse");
    assert!(err["message"]
        .as_str()
        .unwrap()
        .contains("unsupported maxval"));

    let flat = ScalarField::filled(12, 12, 0.4).unwrap();
    write_image(&flat, d.join("flat.pgm")).unwrap();
    let out = aeseg(&["segment", "--input", "flat.pgm", "--out-dir", "s"], d);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "degenerate");

    assert!(aeseg(
        &[
            "phantom",
            "--kind",
            "two_disks",
            "--n",
            "20",
            "--out-dir",
            "p"
        ],
        d
    )
    .status
    .success());
    let out = aeseg(
        &[
            "denoise",
            "--input",
            "p/phantom.pgm",
            "--k",
            "4",
            "--K",
            "5",
            "--out",
            "o.pgm",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));

    let out = aeseg(
        &[
            "segment",
            "--input",
            "p/phantom.pgm",
            "--threshold",
            "fixed:1.5",
            "--out-dir",
            "s",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn matrix_dump_is_matrix_market() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(aeseg(
        &["phantom", "--kind", "step1d", "--n", "9", "--out-dir", "p"],
        d
    )
    .status
    .success());
    let out = aeseg(
        &[
            "eigs",
            "--input",
            "p/phantom.pgm",
            "--k",
            "2",
            "--out-dir",
            "e",
            "--dump-matrix",
            "a.mtx",
        ],
        d,
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(d.join("a.mtx")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("%%MatrixMarket matrix coordinate real symmetric")
    );
    assert_eq!(lines.next(), Some("7 7 13"));
}
