use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tangency_core::{AnySeries, TruncatedSeries2, C64};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tangency-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const TOY: &str = "params = [\"l\"]\n[pair]\ndelta_u = \"(y - 0.3)^2 + l * (1 + 0.3*(y - 0.3))\"\ntarget = \"1 + 0.2*l\"\nscale = \"2 + 0.1*l\"\n";
const QUADRATIC: &str = "params = [\"a\", \"c\"]\n[[factor]]\np = [\"c\", \"0\", \"1\"]\na = \"a\"\n";

fn germ_json(dir: &Path, terms: &[(usize, usize, f64)]) -> PathBuf {
    let terms: Vec<_> = terms.iter().map(|&(i, j, c)| (i, j, C64::new(c, 0.0))).collect();
    let s = AnySeries::Two(TruncatedSeries2::from_terms(8, &terms));
    write(dir, "phi.json", &s.to_json_string())
}

#[test]
fn germ_classify_prints_record() {
    let dir = tempfile::tempdir().unwrap();
    let phi = germ_json(dir.path(), &[(0, 3, 1.0), (2, 0, 1.0)]);
    let o = run(&["germ", "classify", "--input", phi.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["h"], 2);
    assert_eq!(v["m"], 4);
    assert_eq!(v["blocks"][0][0], 2);
    assert_eq!(v["blocks"][0][1], "2/1");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["saddle", "resonance", "--u", "1,2", "--s", "0.5"])), 2);
    let bad = write(dir.path(), "bad.toml", "params = [\"a\"\n");
    assert_eq!(code(&run(&["saddle", "find", "--family", bad.to_str().unwrap(), "--lambda", "1", "--point", "0,0"])), 2);

    let q = write(dir.path(), "q.toml", QUADRATIC);
    assert_eq!(code(&run(&["saddle", "find", "--family", q.to_str().unwrap(), "--lambda", "0.3", "--point", "2,2"])), 3);
    assert_eq!(code(&run(&["--tol", "-1", "saddle", "resonance", "--u", "2", "--s", "0.5"])), 3);
    assert_eq!(code(&run(&["--threads", "0", "saddle", "resonance", "--u", "2", "--s", "0.5"])), 3);
    assert_eq!(code(&run(&["verify", "nonsense"])), 3);
    assert_eq!(code(&run(&["germ", "classify", "--input", dir.path().join("none.json").to_str().unwrap()])), 3);

    // c = 0 is far from the horseshoe locus: no crossing frame exists
    assert_eq!(code(&run(&["bidisk", "horseshoe", "--a", "0.1", "--c", "0"])), 4);

    let o = run(&["saddle", "find", "--family", q.to_str().unwrap(), "--lambda", "0.3,-6", "--point", "2,2"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["periodic"]["kind"], "saddle");
    let u = v["saddle"]["u"][0].as_f64().unwrap();
    let s = v["saddle"]["s"][0].as_f64().unwrap();
    assert!((u * s + 0.3).abs() < 1e-12);
}

#[test]
fn scaling_csv_to_directory() {
    let dir = tempfile::tempdir().unwrap();
    let fam = write(dir.path(), "toy.toml", TOY);
    let out = dir.path().join("out");
    let o = run(&[
        "scan", "scaling", "--family", fam.to_str().unwrap(), "--n", "5..12", "--bracket", "0.01,0.1",
        "--y-center", "0.3", "--y-radius", "0.3", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("scaling.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# tangency-lab scan scaling"));
    assert_eq!(lines.next().unwrap(), "n,lambda_re,lambda_im,abs_lambda,fit_residual");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 8);
    for w in rows.windows(2) {
        let ratio = w[0][3] / w[1][3];
        assert!((ratio - 2.0).abs() < 0.02, "{ratio}");
    }
    let fit: Value = serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert!(fit["deviation"].as_f64().unwrap() < 0.03);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["files"].as_array().unwrap().len(), 2);
}

fn digests(dir: &Path) -> Vec<(String, String)> {
    let m: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["files"].as_array().unwrap().iter().map(|f| (f["name"].as_str().unwrap().into(), f["sha256"].as_str().unwrap().into())).collect()
}

#[test]
fn scenarios_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "toy.toml", TOY);
    let sc = write(
        dir.path(),
        "s.toml",
        "command = \"scan scaling\"\nseed = 3\nout = \"res\"\nfamily = \"toy.toml\"\n[options]\nn = \"5..12\"\nbracket = \"0.01,0.1\"\ny_center = \"0.3\"\ny_radius = 0.3\n",
    );
    let o = run(&["run", sc.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = digests(&dir.path().join("res"));
    let again = dir.path().join("again");
    assert_eq!(code(&run(&["run", sc.to_str().unwrap(), "--out", again.to_str().unwrap()])), 0);
    assert_eq!(first, digests(&again));
    let m: Value = serde_json::from_str(&fs::read_to_string(again.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 3);

    let suite = write(
        dir.path(),
        "g.toml",
        "command = \"germ suite\"\nout = \"germs\"\n[[germ]]\nname = \"fold\"\nterms = [[0, 2, \"1\"], [1, 0, \"1\"]]\n[[germ]]\nname = \"file\"\ninput = \"phi.json\"\n",
    );
    germ_json(dir.path(), &[(0, 2, 1.0), (3, 0, 1.0)]);
    assert_eq!(code(&run(&["run", suite.to_str().unwrap()])), 0);
    let recs: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("germs/records.json")).unwrap()).unwrap();
    assert_eq!(recs[0]["record"]["m"], 1);
    assert_eq!(recs[1]["record"]["m"], 3);

    let broken = write(dir.path(), "b.toml", "command = \"scan scaling\"\n[options\n");
    assert_eq!(code(&run(&["run", broken.to_str().unwrap()])), 2);
    let missing = write(dir.path(), "m.toml", "command = \"scan scaling\"\nfamily = \"nowhere.toml\"\n");
    assert_eq!(code(&run(&["run", missing.to_str().unwrap()])), 3);
    let wrong = write(dir.path(), "w.toml", "command = \"saddle resonance\"\n[options]\nu = \"2\"\ns = \"0.5\"\nbogus = 1\n");
    assert_eq!(code(&run(&["run", wrong.to_str().unwrap()])), 3);
}

#[test]
fn verify_suites() {
    for suite in ["resonance", "germ-oracles", "horseshoe"] {
        let o = run(&["verify", suite]);
        assert_eq!(code(&o), 0, "{suite}: {}", String::from_utf8_lossy(&o.stderr));
        let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert!(v.as_array().unwrap().iter().all(|c| c["pass"] == true));
    }
}
