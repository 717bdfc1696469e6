use std::fs;
use std::path::Path;

use tenfuse::cli::{run_cli, EXIT_MISMATCH, EXIT_OK, EXIT_UNSAT, EXIT_USAGE};
use tenfuse::tensor::read_tns;

const RUNNING: &str = "\
extent i 6
extent j 6
extent k 6
extent p 6
extent q 6
extent r 6
X[i,j,q,r] = A[i,p,q] * B[j,p,r]
Y[i,j,k,r] = X[i,j,q,r] * C[k,q,r]
R[i,j,k] = Y[i,j,k,r] * D[j,k,r]
";

const GOLDEN: &str = "forall(r, forall(j, where(forall(k, forall(i, R(j,k,i) = Y(k,i) * D(r,j,k))), \
where(forall(q, forall(k, forall(i, Y(k,i) = X(q,i) * C(r,q,k)))), \
forall(p, forall(q, forall(i, X(q,i) = A(p,q,i) * B(r,j,p))))))))";

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("tenfuse").chain(args.iter().copied());
    let code = run_cli(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn plan_emits_golden_ir_at_bound_two() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "net.txt", RUNNING);
    let ir = dir.path().join("ir.txt");
    let (code, out, _) = cli(&[
        "plan",
        "--network",
        &net,
        "--max-order",
        "2",
        "--root-layout",
        "j,k,i",
        "--emit-ir",
        ir.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("l = 2"));
    assert_eq!(fs::read_to_string(ir).unwrap().trim(), GOLDEN);
}

#[test]
fn plan_json_and_report_round_trip_through_verify() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "net.txt", RUNNING);
    let rep = dir.path().join("rep.json");
    let (code, out, _) = cli(&["plan", "--network", &net, "--json", "--report", rep.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    serde_json::from_str::<serde_json::Value>(&out).unwrap();
    let (code, _, err) = cli(&["verify", "--network", &net, "--schedule", rep.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
}

#[test]
fn verify_rejects_tampered_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "net.txt", RUNNING);
    let rep = dir.path().join("rep.json");
    assert_eq!(cli(&["plan", "--network", &net, "--report", rep.to_str().unwrap()]).0, EXIT_OK);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&rep).unwrap()).unwrap();
    // reverse the root contraction's loop order
    let loops = v["schedule"][2]["loop_order"].as_array_mut().unwrap();
    loops.reverse();
    fs::write(&rep, v.to_string()).unwrap();
    let (code, _, _) = cli(&["verify", "--network", &net, "--schedule", rep.to_str().unwrap()]);
    assert_ne!(code, EXIT_OK);
}

#[test]
fn verify_cross_checks_every_bound() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "net.txt", RUNNING);
    let (code, _, err) = cli(&["verify", "--network", &net]);
    assert_eq!(code, EXIT_OK, "{err}");
}

#[test]
fn infeasible_root_layout_is_unsat() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "net.txt", RUNNING);
    let (code, _, err) = cli(&["plan", "--network", &net, "--max-order", "2", "--root-layout", "k,i,j"]);
    assert_eq!(code, EXIT_UNSAT);
    assert!(!err.is_empty());
}

#[test]
fn run_with_synthetic_inputs_checks_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "net.txt", RUNNING);
    let stats = dir.path().join("stats.json");
    let res = dir.path().join("r.tns");
    let mut args = vec!["run", "--network", &net];
    let specs = ["A=:0.3:1", "B=:0.3:2", "C=:0.3:3", "D=:0.3:4"];
    for s in &specs {
        args.extend(["--synthetic", s]);
    }
    args.extend(["--check", "--stats", stats.to_str().unwrap(), "--output", res.to_str().unwrap()]);
    let (code, _, err) = cli(&args);
    assert_eq!(code, EXIT_OK, "{err}");
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(stats).unwrap()).unwrap();
    assert!(s["multiply_adds"].as_u64().unwrap() > 0);
    assert!(s["max_workspace_cells"].is_u64());
    let r = read_tns(std::io::BufReader::new(fs::File::open(res).unwrap()), None).unwrap();
    assert_eq!(r.order(), 3);
}

#[test]
fn run_from_tns_files_with_dense_operand() {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "mm.txt", "extent i 2\nextent j 2\nextent k 2\nC[i,j] = A[i,k] * B[k,j]\n");
    let a = write(dir.path(), "a.tns", "1 2 1.0\n2 1 3.0\n");
    let b = write(dir.path(), "b.tns", "1 1 5.0\n1 2 6.0\n2 1 7.0\n2 2 8.0\n");
    let out_path = dir.path().join("c.tns");
    let (code, _, err) = cli(&[
        "run",
        "--network",
        &net,
        "--tensor",
        &format!("A={a}"),
        "--tensor",
        &format!("B={b}"),
        "--dense",
        "B",
        "--check",
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let c = read_tns(std::io::BufReader::new(fs::File::open(out_path).unwrap()), None).unwrap();
    assert_eq!(c.get(&[0, 0]), 7.0);
    assert_eq!(c.get(&[0, 1]), 8.0);
    assert_eq!(c.get(&[1, 0]), 15.0);
    assert_eq!(c.get(&[1, 1]), 18.0);
}

#[test]
fn check_failure_maps_to_mismatch_exit() {
    // negative tolerances reject every point, exercising the failure path
    let (code, _, err) =
        cli(&["bench", "running_example", "--extents", "3", "--rel-tol=-1", "--abs-tol=-1", "--check"]);
    assert_eq!(code, EXIT_MISMATCH, "{err}");
}

#[test]
fn bench_kinds_pass_check() {
    for kind in ["mttkrp1", "mttkrp3", "ttmc2", "running_example", "masked_3term"] {
        let (code, _, err) = cli(&["bench", kind, "--extents", "5", "--rank", "3", "--density", "0.3", "--check"]);
        assert_eq!(code, EXIT_OK, "{kind}: {err}");
    }
}

#[test]
fn bench_out_dir_is_runnable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(cli(&["bench", "mttkrp2", "--extents", "6", "--rank", "2", "--out-dir", d]).0, EXIT_OK);
    let net = dir.path().join("network.txt");
    assert!(net.exists());
    let mut args = vec!["run".to_owned(), "--network".into(), net.to_str().unwrap().into(), "--check".into()];
    for e in fs::read_dir(dir.path()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "tns") {
            let id = p.file_stem().unwrap().to_str().unwrap().to_owned();
            args.push("--tensor".into());
            args.push(format!("{id}={}", p.display()));
        }
    }
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let (code, _, err) = cli(&refs);
    assert_eq!(code, EXIT_OK, "{err}");
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(cli(&["plan", "--network", "/nonexistent/net.txt"]).0, EXIT_USAGE);
    assert_eq!(cli(&["bench", "mttkrp9"]).0, EXIT_USAGE);
    let bad = write(dir.path(), "bad.txt", "extent i 2\nextent i 3\nC[i] = A[i] * B[i]\n");
    let (code, _, err) = cli(&["plan", "--network", &bad]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains('i'));
    let net = write(dir.path(), "net.txt", RUNNING);
    let (code, _, err) = cli(&["run", "--network", &net, "--tensor", "A=/nonexistent.tns"]);
    assert_eq!(code, EXIT_USAGE, "{err}");
    assert_eq!(cli(&["--help"]).0, EXIT_OK);
}
