use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn flowlda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlda"))
        .args(args)
        .env("FLOWLDA_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = flowlda(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small, fast configuration shared by the end-to-end tests.
fn small_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "seed": 3,
        "blocks": 2,
        "width": 8,
        "train": {"epochs": 3, "batch_size": 64},
        "simulation": {"samples_per_class": 60, "generator": {"kind": "coupling", "blocks": 4, "hidden": 8}},
        "embeddings": {"dim": 6, "class_rank": 3, "train_classes": 12, "trial_classes": 5,
                       "samples_per_class": 10, "trials_per_class": 6, "warp_hidden": 8},
        "verification_dim": 2
    });
    let path = dir.join("small.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn metrics(dir: &Path) -> Vec<Value> {
    let text = fs::read_to_string(dir.join("metrics.json")).unwrap();
    serde_json::from_str::<Vec<Value>>(&text).unwrap()
}

fn metric(docs: &[Value], name: &str) -> f64 {
    docs.iter()
        .find(|d| d["metric"] == name)
        .unwrap_or_else(|| panic!("no metric {name}"))["value"]
        .as_f64()
        .unwrap()
}

#[test]
fn eval_with_missing_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_model.dnfm");
    let out = flowlda(&["eval", "--checkpoint", s(&missing), "--data", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_model.dnfm"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(flowlda(&["simulate", "--model", "pca"]).status.code(), Some(1));
    assert_eq!(flowlda(&["frobnicate"]).status.code(), Some(1));
    let missing = dir.path().join("missing.json");
    let out = flowlda(&["simulate", "--config", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    let out = Command::new(env!("CARGO_BIN_EXE_flowlda"))
        .args(["simulate", "--out", s(dir.path())])
        .env("FLOWLDA_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unwritable_output_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain_file");
    fs::write(&file, "x").unwrap();
    let cfg = small_config(dir.path());
    let out = flowlda(&["simulate", "--config", s(&cfg), "--out", s(&file.join("sub"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn numeric_failure_exits_two() {
    // finite inputs whose squares overflow
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("huge.csv");
    fs::write(&data, "label,f0,f1\n0,1e200,1\n0,-1e200,2\n0,3,1\n1,1,1e200\n1,2,-1e200\n1,1,3\n").unwrap();
    let out = flowlda(&[
        "train", "--data", s(&data), "--model", "dnf", "--epochs", "1", "--blocks", "1", "--out", s(dir.path()),
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("epoch"), "{stderr}");
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_train_eval_reduce_figure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&sim), "--format", "csv"]);
    let observed = sim.join("observed.csv");
    assert!(fs::read_to_string(&observed).unwrap().starts_with("label,f0,f1,f2\n"));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(sim.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(files, ["observed.csv", "latent.csv", "generator.dnfm", "manifest.json"]);
    assert_eq!(manifest["inputs"][0]["hash"].as_str().unwrap().len(), 64);

    let trained = dir.path().join("trained");
    ok(&["train", "--config", s(&cfg), "--data", s(&observed), "--heldout", s(&observed), "--out", s(&trained)]);
    let trace = fs::read_to_string(trained.join("trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,train_nll,heldout_nll,grad_norm,seconds\n"));
    assert_eq!(trace.lines().count(), 4);
    let docs = metrics(&trained);
    for d in &docs {
        let keys: Vec<&String> = d.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["config", "metric", "seed", "value"]);
    }
    assert!(metric(&docs, "train_nll").is_finite());

    let checkpoint = trained.join("model.dnfm");
    let eval = dir.path().join("eval");
    ok(&["eval", "--config", s(&cfg), "--checkpoint", s(&checkpoint), "--data", s(&observed), "--out", s(&eval)]);
    let docs = metrics(&eval);
    let ari = metric(&docs, "ari");
    assert!((-1.0..=1.0).contains(&ari));
    assert_eq!(metric(&docs, "chance"), 0.25);
    assert!(metric(&docs, "residual_probe") <= 1.0);

    let reduced = dir.path().join("reduced");
    ok(&["reduce", "--checkpoint", s(&checkpoint), "--data", s(&observed), "--out", s(&reduced), "--format", "csv"]);
    let text = fs::read_to_string(reduced.join("reduced.csv")).unwrap();
    assert!(text.starts_with("label,f0,f1\n"));
    assert_eq!(text.lines().count(), 1 + 240);

    let fig = dir.path().join("fig");
    ok(&["figure", "--data", s(&observed), "--checkpoint", s(&checkpoint), "--out", s(&fig), "--axes", "0,2"]);
    let svg = fs::read_to_string(fig.join("figure.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 240);
    assert!(svg.contains(">dim 2<"));
    ok(&["figure", "--data", s(&observed), "--checkpoint", s(&checkpoint), "--out", s(&fig), "--axes", "0,2"]);
    assert_eq!(svg, fs::read_to_string(fig.join("figure.svg")).unwrap());
    let bad = flowlda(&["figure", "--data", s(&observed), "--out", s(&fig), "--axes", "0,5"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn simulation_pipeline_reports_all_three_models_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["pipeline", "--config", s(&cfg), "--out", s(&a)]);
    let docs = metrics(&a);
    for name in ["ari_dnf", "ari_dnf_subspace", "ari_lda"] {
        assert!(metric(&docs, name).is_finite());
    }
    for f in ["models/dnf.dnfm", "models/dnf-subspace.dnfm", "models/lda-fisher.dnfm", "figures/observed.svg"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let observed = fs::read(a.join("data/observed.dnfv1")).unwrap();
    assert_eq!(&observed[..4], b"DNFV");

    let multi = Command::new(env!("CARGO_BIN_EXE_flowlda"))
        .args(["pipeline", "--config", s(&cfg), "--out", s(&b)])
        .env("FLOWLDA_THREADS", "3")
        .output()
        .unwrap();
    assert!(multi.status.success());
    let strip = |docs: Vec<Value>| -> Vec<(String, u64)> {
        docs.iter()
            .map(|d| (d["metric"].as_str().unwrap().to_string(), d["value"].as_f64().unwrap().to_bits()))
            .collect()
    };
    assert_eq!(strip(docs), strip(metrics(&b)));
    let manifest = |d: &Path| -> Value { serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap() };
    assert_eq!(manifest(&a)["input_hash"], manifest(&b)["input_hash"]);
}

#[test]
fn verification_pipeline_writes_trial_lists() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("v");
    ok(&["pipeline", "--task", "verification", "--config", s(&cfg), "--out", s(&out)]);
    let docs = metrics(&out);
    let trials = metric(&docs, "num_trials") as usize;
    assert_eq!(trials, 2 * 6 * 5);
    for name in ["raw", "lda-fisher", "dnf-subspace"] {
        let text = fs::read_to_string(out.join(format!("trials/{name}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("label_a,label_b,is_genuine,score"));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), trials);
        for r in rows {
            assert_eq!(r[0] == r[1], r[2] == "1");
            assert!(r[3].parse::<f64>().unwrap().is_finite());
        }
    }
    for name in ["eer_raw", "eer_lda", "eer_dnf_subspace"] {
        assert!((0.0..=1.0).contains(&metric(&docs, name)));
    }
}

// ---------------------------------------------------------------------
// figure oracle

type Pt = (f64, f64);

fn circles(svg: &str) -> Vec<(Pt, String)> {
    let attr = |tag: &str, name: &str| -> String {
        let start = tag.find(&format!("{name}=\"")).unwrap() + name.len() + 2;
        let end = start + tag[start..].find('"').unwrap();
        tag[start..end].to_string()
    };
    svg.lines()
        .filter(|l| l.starts_with("<circle"))
        .map(|l| {
            let x: f64 = attr(l, "cx").parse().unwrap();
            let y: f64 = attr(l, "cy").parse().unwrap();
            ((x, y), attr(l, "fill"))
        })
        .collect()
}

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain.
fn hull(mut pts: Vec<Pt>) -> Vec<Pt> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Pt> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Pt> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Separating-axis test for two convex polygons.
fn disjoint(a: &[Pt], b: &[Pt]) -> bool {
    for poly in [a, b] {
        for i in 0..poly.len() {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            let axis = (q.1 - p.1, p.0 - q.0);
            let proj = |v: &[Pt]| {
                v.iter()
                    .map(|u| u.0 * axis.0 + u.1 * axis.1)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
            };
            let (a0, a1) = proj(a);
            let (b0, b1) = proj(b);
            if a1 < b0 || b1 < a0 {
                return true;
            }
        }
    }
    false
}

#[test]
fn simulation_latent_figure_separates_classes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"simulation": {"samples_per_class": 200}}"#).unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&sim)]);
    let fig = dir.path().join("fig");
    ok(&["figure", "--data", s(&sim.join("latent.dnfv1")), "--out", s(&fig), "--axes", "0,1"]);
    let pts = circles(&fs::read_to_string(fig.join("figure.svg")).unwrap());
    assert_eq!(pts.len(), 800);
    let mut colors: Vec<String> = pts.iter().map(|(_, c)| c.clone()).collect();
    colors.sort();
    colors.dedup();
    assert_eq!(colors.len(), 4);

    let groups: Vec<Vec<Pt>> = colors
        .iter()
        .map(|c| pts.iter().filter(|(_, k)| k == c).map(|(p, _)| *p).collect())
        .collect();
    let centroid = |g: &[Pt]| {
        let n = g.len() as f64;
        (g.iter().map(|p| p.0).sum::<f64>() / n, g.iter().map(|p| p.1).sum::<f64>() / n)
    };
    let centres: Vec<Pt> = groups.iter().map(|g| centroid(g)).collect();
    let separation = |i: usize| {
        (0..centres.len())
            .filter(|&j| j != i)
            .map(|j| ((centres[i].0 - centres[j].0).powi(2) + (centres[i].1 - centres[j].1).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| separation(b).partial_cmp(&separation(a)).unwrap());
    let hulls: Vec<Vec<Pt>> = order[..3].iter().map(|&i| hull(groups[i].clone())).collect();
    for i in 0..3 {
        for j in i + 1..3 {
            assert!(disjoint(&hulls[i], &hulls[j]), "hulls {i} and {j} overlap");
        }
    }
}

#[test]
fn hull_oracle_sanity() {
    let square = hull(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)]);
    assert_eq!(square.len(), 4);
    let shifted: Vec<Pt> = square.iter().map(|p| (p.0 + 2.0, p.1)).collect();
    let overlapping: Vec<Pt> = square.iter().map(|p| (p.0 + 0.5, p.1 + 0.5)).collect();
    assert!(disjoint(&square, &shifted));
    assert!(!disjoint(&square, &overlapping));
}
