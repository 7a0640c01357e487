use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use varmap::cli::MapFile;
use varmap::duffing::{build_map, DuffingMap, DuffingParams};
use varmap::poly::{Basis, PolyMap, TruncatedPoly};

fn varmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varmap")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn build(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["--quiet", "build", "--out", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = varmap(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    path
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

fn same_bits(a: &DuffingMap, b: &DuffingMap) -> bool {
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    a.params == b.params
        && bits(&a.map.expansion_point) == bits(&b.map.expansion_point)
        && bits(&a.map.design_image) == bits(&b.map.design_image)
        && a.map.duration.to_bits() == b.map.duration.to_bits()
        && a.map.steps == b.map.steps
        && a.map.components.iter().zip(&b.map.components).all(|(p, q)| bits(p.coeffs()) == bits(q.coeffs()))
}

#[test]
fn built_map_round_trips_bit_exactly() {
    let map = build_map(DuffingParams::default(), 1.26082, 2.05452, 5, 256).unwrap();
    let file = MapFile::new(map);
    let back = MapFile::parse(&file.to_text()).unwrap();
    assert!(same_bits(&file.map, &back.map));
    assert_eq!(back.built_at, file.built_at);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.map");
    file.save(&path).unwrap();
    assert!(same_bits(&MapFile::load(&path).unwrap().map, &file.map));
}

proptest! {
    #[test]
    fn arbitrary_coefficients_round_trip(
        bits in prop::collection::vec(any::<u64>(), 30),
        point in prop::array::uniform3(-1e3f64..1e3),
    ) {
        let basis = Basis::shared(3, 2).unwrap();
        let finite = |b: u64| { let x = f64::from_bits(b); if x.is_finite() { x } else { 0.0 } };
        let components = bits
            .chunks(10)
            .map(|c| TruncatedPoly::from_coeffs(&basis, c.iter().map(|&b| finite(b)).collect()).unwrap())
            .collect();
        let map = PolyMap {
            components,
            expansion_point: vec![point[0], point[1], 1.3],
            design_image: point.to_vec(),
            duration: 2.0 * std::f64::consts::PI / 1.3,
            steps: 17,
        };
        let file = MapFile::new(DuffingMap { params: DuffingParams::new(point[2], -point[0], 1.3), map });
        let back = MapFile::parse(&file.to_text()).unwrap();
        prop_assert!(same_bits(&file.map, &back.map));
    }
}

#[test]
fn malformed_map_files_are_rejected() {
    let map = build_map(DuffingParams::default(), 0.0, 0.0, 2, 32).unwrap();
    let text = MapFile::new(map).to_text();
    assert!(MapFile::parse(&text.replacen("varmap-map v1", "varmap-map v2", 1)).is_err());
    assert!(MapFile::parse(&format!("{text}0 3 0 0 1.0\n")).is_err());
    let dup = text.lines().last().unwrap();
    assert!(MapFile::parse(&format!("{text}{dup}\n")).is_err());
    assert!(MapFile::parse(&text.replace("\nn 2\n", "\nn 0\n")).is_err());
}

#[test]
fn build_reports_equation_counts() {
    let dir = tempfile::tempdir().unwrap();
    for (order, ne) in [(1, 12), (8, 495)] {
        let out = dir.path().join("m.map");
        let o = varmap(&["build", "--order", &order.to_string(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        assert!(stderr(&o).contains(&format!("N_e = {ne}\n")), "{}", stderr(&o));
        assert!(stdout(&o).is_empty());
    }
    let o = varmap(&["build", "--order", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn build_failures_exit_with_two() {
    let o = varmap(&["--quiet", "build", "--order", "2", "--q-bd", "1e120"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = varmap(&["--quiet", "build", "--order", "1", "--out", "/nonexistent-dir/x.map"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn map_written_by_build_matches_library_build() {
    let dir = tempfile::tempdir().unwrap();
    let path = build(dir.path(), "m3.map", &["--order", "3", "--steps", "300"]);
    let lib = build_map(DuffingParams::default(), 1.26082, 2.05452, 3, 300).unwrap();
    assert!(same_bits(&MapFile::load(&path).unwrap().map, &lib));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(varmap(&["sweep", "--bogus"]).status.code(), Some(1));
    assert_eq!(varmap(&["sweep", "--omega-min", "1.3", "--omega-max", "1.3", "--samples", "2"]).status.code(), Some(1));
    assert_eq!(varmap(&["sweep", "--map", "x.map", "--beta", "0.2"]).status.code(), Some(1));
    assert_eq!(varmap(&["compare"]).status.code(), Some(1));
    assert_eq!(varmap(&["--help"]).status.code(), Some(0));
}

#[test]
fn sweep_csv_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let args = [
        "sweep", "--beta", "0.1", "--epsilon", "1.5", "--omega-min", "1.4", "--omega-max", "1.6", "--samples", "3",
        "--transient", "200", "--keep", "8", "--seed-q", "0", "--seed-p", "0", "--exact-steps", "200",
        "--out", out.to_str().unwrap(),
    ];
    assert_eq!(varmap(&args).status.code(), Some(0));
    let first = std::fs::read(&out).unwrap();
    assert_eq!(varmap(&args).status.code(), Some(0));
    assert_eq!(std::fs::read(&out).unwrap(), first);

    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("omega,q,p,period,escaped\n"));
    assert!(!text.contains('\r'));
    let r = rows(&text);
    assert_eq!(r.len(), 3 * 8);
    assert!(r.iter().all(|row| row.len() == 5 && row[4] == "0" && row[3] == "1"));
    let omegas: Vec<f64> = r.iter().map(|row| row[0].parse().unwrap()).collect();
    assert_eq!(omegas[0], 1.4);
    assert_eq!(omegas[23], 1.6);
}

#[test]
fn down_sweep_runs_from_the_top() {
    let o = varmap(&[
        "--quiet", "sweep", "--epsilon", "1.5", "--omega-min", "1.4", "--omega-max", "1.6", "--samples", "2",
        "--direction", "down", "--transient", "10", "--keep", "1", "--exact-steps", "100",
    ]);
    let r = rows(&stdout(&o));
    assert_eq!(r[0][0], "1.6");
    assert_eq!(r[1][0], "1.4");
}

#[test]
fn taylor_sweep_far_from_expansion_warns_and_marks_escapes() {
    let dir = tempfile::tempdir().unwrap();
    let map = build(dir.path(), "m2.map", &["--order", "2", "--steps", "256"]);
    let o = varmap(&[
        "sweep", "--map", map.to_str().unwrap(), "--omega-min", "1.1", "--omega-max", "1.2", "--samples", "2",
        "--keep", "4",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning: omega range"), "{}", stderr(&o));
    for row in rows(&stdout(&o)) {
        if row[4] == "1" {
            assert_eq!(row[3], "");
        }
    }
}

#[test]
fn attractor_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let map = build(dir.path(), "m8.map", &["--order", "8"]);
    let m = map.to_str().unwrap();

    let o = varmap(&["--quiet", "attractor", "--map", m, "--keep", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "q,p\n");

    let o = varmap(&["attractor", "--map", m, "--omega", "1.2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "q,p\n");
    assert!(stderr(&o).contains("escaped"));

    let window = ["attractor", "--map", m, "--keep", "20000", "--transient", "1000", "--window", "1.0,1.3,1.9,2.1"];
    let o = varmap(&window);
    let pts = rows(&stdout(&o));
    assert!(!pts.is_empty() && pts.len() < 20000);
    for p in &pts {
        let (q, pp): (f64, f64) = (p[0].parse().unwrap(), p[1].parse().unwrap());
        assert!((1.0..=1.3).contains(&q) && (1.9..=2.1).contains(&pp));
    }
    assert_eq!(varmap(&window).stdout, o.stdout);
}

#[test]
fn undriven_fixed_point_is_the_stable_origin() {
    let o = varmap(&["--quiet", "fixpoint", "--epsilon", "0", "--omega", "1.7", "--guess-q", "0.4", "--guess-p", "-0.3"]);
    assert_eq!(o.status.code(), Some(0));
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 1);
    let v: Vec<f64> = r[0].iter().map(|s| s.parse().unwrap()).collect();
    assert!(v[1].abs() < 1e-9 && v[2].abs() < 1e-9);
    assert_eq!(v[4], 1.0);
    assert_eq!(v[9], 1.0);
    let modulus = v[5].hypot(v[6]);
    assert!((modulus - (-0.1 * 2.0 * std::f64::consts::PI / 1.7).exp()).abs() < 1e-6);
}

#[test]
fn fixpoint_first_failure_exits_with_two() {
    let o = varmap(&["--quiet", "fixpoint", "--omega", "1.285", "--epsilon", "1e9", "--guess-q", "1e3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_behaviour() {
    let dir = tempfile::tempdir().unwrap();
    let maps: Vec<PathBuf> = [2, 3, 5].iter().map(|n| build(dir.path(), &format!("m{n}.map"), &["--order", &n.to_string()])).collect();
    let list = maps.iter().map(|p| p.to_str().unwrap()).collect::<Vec<_>>().join(",");
    let o = varmap(&["--quiet", "compare", "--maps", &list, "--radii", "0,1e-2"]);
    assert_eq!(o.status.code(), Some(0));
    let r: Vec<Vec<f64>> = rows(&stdout(&o)).iter().map(|row| row.iter().map(|s| s.parse().unwrap()).collect()).collect();
    assert_eq!(r.len(), 6);
    for row in r.iter().filter(|row| row[1] == 0.0) {
        assert!(row[2] < 1e-10, "{row:?}");
    }
    let at = |order: f64| r.iter().find(|row| row[0] == order && row[1] == 1e-2).unwrap()[2];
    assert!(at(2.0) > at(3.0) && at(3.0) > at(5.0));

    let other = build(dir.path(), "o.map", &["--order", "2", "--q-bd", "0", "--p-bd", "0"]);
    let o = varmap(&["compare", "--maps", &format!("{},{}", maps[0].display(), other.display())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# sweep defaults\nepsilon = 1.5\nomega_min = 1.4\nomega-max = 1.6\nsamples = 5\nkeep = 2\ntransient = 10\nexact-steps = 100\nquiet = true\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let o = varmap(&["--config", c, "sweep", "--samples", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).is_empty());
    assert_eq!(rows(&stdout(&o)).len(), 3 * 2);

    std::fs::write(&cfg, "omega_mni = 1.4\n").unwrap();
    let o = varmap(&["--config", c, "sweep"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown key 'omega-mni'"));

    // a key valid for another subcommand is still unknown here
    std::fs::write(&cfg, "order = 3\n").unwrap();
    assert_eq!(varmap(&["--config", c, "sweep"]).status.code(), Some(1));
}
