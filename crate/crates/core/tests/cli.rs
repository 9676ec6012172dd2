use sle_lab::cli::*;
use sle_lab::io;

fn argv(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let code = run(&argv(&format!("sle-lab simulate --process standard --kappa 2 --t 1 --n 1000 --seed 7 --out {}", out.display())));
        assert_eq!(code, EXIT_OK);
    }
    for f in ["driver.csv", "trace.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let m = io::read_manifest(&a.join("manifest.json")).unwrap();
    assert_eq!(m.files["driver.csv"], io::sha256_hex(&std::fs::read(a.join("driver.csv")).unwrap()));
    assert_eq!(run(&argv(&format!("sle-lab replay {}", a.join("manifest.json").display()))), EXIT_OK);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display();
    assert_eq!(run(&argv(&format!("sle-lab simulate --kappa 5 --out {out}"))), EXIT_VALIDATION);
    assert_eq!(run(&argv(&format!("sle-lab simulate --process intermediate --kappa 2 --rho -1.5 --out {out}"))), EXIT_VALIDATION);
    assert_eq!(run(&argv("sle-lab hyp --kappa 2 --rho -2")), EXIT_VALIDATION);
    assert_eq!(run(&argv(&format!("sle-lab martingale --x2 0.1 --out {out}"))), EXIT_VALIDATION);
    assert_eq!(run(&argv(&format!("sle-lab martingale --n 1 --cells 4 --substeps 2 --out {out}"))), EXIT_INVALID_TEST);
    assert_eq!(run(&argv(&format!("sle-lab reversibility --kappa 4.5 --n 4 --out {out}"))), EXIT_VALIDATION);
    assert_eq!(run(&argv("sle-lab bogus")), EXIT_VALIDATION);
}

#[test]
fn config_file_values_lose_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "kappa = 3\nn = 50\nseed = 4\n").unwrap();
    let out = dir.path().join("o");
    let code = run(&argv(&format!("sle-lab simulate --config {} --n 20 --out {}", cfg.display(), out.display())));
    assert_eq!(code, EXIT_OK);
    let m = io::read_manifest(&out.join("manifest.json")).unwrap();
    assert_eq!(m.params["kappa"], "3");
    assert_eq!(m.params["n"], "20");
    assert_eq!(m.params["seed"], "4");
    let rows = std::fs::read_to_string(out.join("driver.csv")).unwrap().lines().count();
    assert_eq!(rows, 22);
}

#[test]
fn csv_numbers_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    run(&argv(&format!("sle-lab simulate --kappa 2.5 --n 200 --seed 3 --out {}", out.display())));
    let text = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    for line in text.lines().skip(1) {
        for field in line.split(',') {
            let x: f64 = field.parse().unwrap();
            assert_eq!(io::fmt_num(x), field);
        }
    }
}

#[test]
fn forces_parse() {
    let f = parse_forces("1@0+, -0.5@2,0.3@inf").unwrap();
    assert_eq!(f.len(), 3);
    assert!(parse_forces("1@x").is_err());
    assert!(parse_forces("1").is_err());
}

#[test]
fn hyp_rows_match_closed_forms() {
    let hp = sle_lab::special::HypParams::new(2.0, 1.0).unwrap();
    let t = hyp_table(&hp, &[0.0, 0.5]).unwrap();
    let num = |r: usize, c: usize| t.rows[r][c].parse::<f64>().unwrap();
    assert_eq!(num(0, 1), 1.0);
    assert_eq!(num(0, 3), 1.0);
    assert!((num(1, 1) - (1.0 - 0.5 / 3.0)).abs() < 1e-12);
    assert_eq!(t.rows[1][5], "true");
}
