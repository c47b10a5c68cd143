mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use apl_core::shell::formats::{AnnotationFile, PredictionsFile, PseudoLabelFile};
use apl_core::shell::json;
use common::files_under;
use serde_json::{json, Value};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn apl_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_apl"));
    cmd.args(args).env_remove("APL_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("apl runs")
}

fn apl(args: &[&str]) -> Output {
    apl_env(args, &[])
}

fn ok(args: &[&str]) -> String {
    let out = apl(args);
    assert!(
        out.status.success(),
        "apl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_reproduces_pinned_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    ok(&[
        "simulate",
        "--config",
        s(&fixtures().join("small.toml")),
        "--out",
        s(&out),
    ]);
    let fresh = files_under(&out);
    let pinned = files_under(&fixtures().join("small"));
    assert_eq!(fresh.keys().collect::<Vec<_>>(), pinned.keys().collect::<Vec<_>>());
    for (name, bytes) in &pinned {
        assert!(
            fresh[name] == *bytes,
            "{} differs from the pinned fixture",
            name.display()
        );
    }
}

/// Runs select → icd-train → refine → eval → acp-labels → report on the
/// pinned fixture into `dir`.
fn pipeline(dir: &Path, jobs: &str) {
    let fx = fixtures().join("small");
    let ann = fx.join("annotations.json");
    let feats = fx.join("features");
    let cfg = fixtures().join("small.toml");
    let j = |name: &str| dir.join(name);
    let common = ["--jobs", jobs, "--config", s(&cfg)];
    let run = |args: &[&str]| ok(&[args, &common[..]].concat());
    run(&[
        "select",
        "--annotations",
        s(&ann),
        "--predictions",
        s(&fx.join("predictions.json")),
        "--out",
        s(&j("dyn.json")),
    ]);
    run(&[
        "icd-train",
        "--annotations",
        s(&ann),
        "--features",
        s(&feats),
        "--out",
        s(&j("m.icd")),
        "--loss-csv",
        s(&j("loss.csv")),
    ]);
    run(&[
        "refine",
        "--pseudo",
        s(&j("dyn.json")),
        "--model",
        s(&j("m.icd")),
        "--features",
        s(&feats),
        "--annotations",
        s(&ann),
        "--out",
        s(&j("ref.json")),
    ]);
    run(&[
        "eval",
        "--annotations",
        s(&ann),
        "--pseudo",
        s(&j("ref.json")),
        "--out",
        s(&j("eval.json")),
        "--csv",
        s(&j("ap.csv")),
    ]);
    run(&["acp-labels", "--features", s(&feats), "--out", s(&j("acp.json"))]);
    run(&[
        "acp-loss",
        "--features",
        s(&feats),
        "--labels",
        s(&j("acp.json")),
        "--out",
        s(&j("acp_loss.json")),
    ]);
    run(&[
        "report",
        "--run",
        &format!("refined={}", s(&j("eval.json"))),
        "--out",
        s(&j("report.json")),
    ]);
}

#[test]
fn pipeline_is_deterministic_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), "1");
    pipeline(b.path(), "4");
    let fa = files_under(a.path());
    let fb = files_under(b.path());
    assert_eq!(fa.len(), 9);
    assert_eq!(fa, fb);
}

#[test]
fn every_json_writer_round_trips_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "1");
    let fx = fixtures().join("small");
    let check = |path: &Path, rewrite: &dyn Fn(&Path) -> String| {
        let original = std::fs::read_to_string(path).unwrap();
        assert_eq!(rewrite(path), original, "{}", path.display());
    };
    check(&fx.join("annotations.json"), &|p| {
        json::to_string(&AnnotationFile::read(p).unwrap()).unwrap()
    });
    check(&fx.join("predictions.json"), &|p| {
        json::to_string(&PredictionsFile::read(p).unwrap()).unwrap()
    });
    for name in ["dyn.json", "ref.json"] {
        check(&dir.path().join(name), &|p| {
            json::to_string(&PseudoLabelFile::read(p).unwrap()).unwrap()
        });
    }
    for name in ["eval.json", "acp.json", "acp_loss.json", "report.json"] {
        check(&dir.path().join(name), &|p| {
            json::to_string(&json::read::<Value>(p).unwrap()).unwrap()
        });
    }
    check(&fx.join("injections.json"), &|p| {
        json::to_string(&json::read::<Value>(p).unwrap()).unwrap()
    });
}

const CLEAN: &str = "[world]\nn_videos = 20\n\n[noise]\nboundary_jitter = 0.0\nframe_jitter = 0.0\nclass_flip_prob = 0.0\nscore_noise_std = 0.0\nambiguous_rate = 0.0\nmissed_rate = 0.0\nfalse_alarm_rate = 0.0\nvideo_score_scale = [1.0, 1.0]\n";

#[test]
fn zero_noise_selection_reproduces_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = d.join("clean.toml");
    std::fs::write(&cfg, CLEAN).unwrap();
    ok(&["simulate", "--config", s(&cfg), "--out", s(&d.join("sim"))]);
    let ann = d.join("sim/annotations.json");
    let preds = d.join("sim/predictions.json");
    let n_gt = AnnotationFile::read(&ann)
        .unwrap()
        .instances(|_, v| v.subset == apl_core::shell::formats::Subset::Unlabeled)
        .len();

    ok(&[
        "select",
        "--config",
        s(&cfg),
        "--annotations",
        s(&ann),
        "--predictions",
        s(&preds),
        "--fixed-tau-pos",
        "0.3",
        "--out",
        s(&d.join("fixed.json")),
    ]);
    let fixed = PseudoLabelFile::read(&d.join("fixed.json")).unwrap();
    assert_eq!(fixed.positives().len(), n_gt);

    ok(&[
        "select",
        "--config",
        s(&cfg),
        "--annotations",
        s(&ann),
        "--predictions",
        s(&preds),
        "--out",
        s(&d.join("dyn.json")),
    ]);
    let dynamic = PseudoLabelFile::read(&d.join("dyn.json")).unwrap();
    let kept: usize = dynamic
        .videos
        .values()
        .map(|v| v.positives.len() + v.candidates.len())
        .sum();
    assert_eq!(kept, n_gt);

    for file in ["fixed.json", "dyn.json"] {
        let out: Value = serde_json::from_str(&ok(&[
            "eval",
            "--json",
            "--annotations",
            s(&ann),
            "--pseudo",
            s(&d.join(file)),
        ]))
        .unwrap();
        assert_eq!(out["quality"]["pos_acc"].as_f64(), Some(1.0), "{file}");
        assert_eq!(out["quality"]["avg_tiou"].as_f64(), Some(1.0), "{file}");
    }
}

#[test]
fn select_fixture_matches_dynamic_partition_example() {
    // Four isolated one-frame instances with joint scores 0.9, 0.7, 0.5, 0.1.
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let t = 40;
    let mut cls = vec![0.0; t];
    for (frame, score) in [(5, 0.9), (15, 0.7), (25, 0.5), (35, 0.1)] {
        cls[frame] = score;
    }
    let preds = json!({"videos": {"v": {
        "fps": 1.0,
        "cls": [cls],
        "tiou_hat": vec![1.0; t],
        "tnd_hat": vec![0.0; t],
        "offsets": vec![[0.5, 0.5]; t],
    }}});
    let ann = json!({"classes": ["a"], "videos": {"v": {"duration": 40.0, "fps": 1.0, "annotations": []}}});
    std::fs::write(d.join("p.json"), preds.to_string()).unwrap();
    std::fs::write(d.join("a.json"), ann.to_string()).unwrap();
    ok(&[
        "select",
        "--annotations",
        s(&d.join("a.json")),
        "--predictions",
        s(&d.join("p.json")),
        "--out",
        s(&d.join("o.json")),
    ]);
    let out = PseudoLabelFile::read(&d.join("o.json")).unwrap();
    let set = &out.videos["v"];
    assert!((set.tau_pos - 0.863299).abs() < 1e-6, "{}", set.tau_pos);
    let scores = |v: &[apl_core::Instance]| v.iter().map(|i| i.score).collect::<Vec<_>>();
    assert_eq!(scores(&set.positives), vec![0.9]);
    assert_eq!(scores(&set.candidates), vec![0.7, 0.5]);
    assert_eq!(scores(&set.rejected), vec![0.1]);
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let out = apl(&[
        "select",
        "--annotations",
        "/no/such/annotations.json",
        "--predictions",
        "x.json",
        "--out",
        "y.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/annotations.json"));
}

#[test]
fn schema_violations_exit_2_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.json");
    std::fs::write(&p, "{\"classes\": [\"a\"],\n \"videos\": {\"v\": {\"duration\": 5, \"fps\": 1,\n \"annotations\": [{\"segment\": [4, 2], \"label\": \"a\"}]}}}").unwrap();
    let out = apl(&["eval", "--annotations", s(&p), "--detections", s(&p)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("bad.json") && err.contains("line 3") && err.contains("segment"),
        "{err}"
    );
}

#[test]
fn unknown_config_keys_are_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "[selection]\ntau_negative = 0.2\n").unwrap();
    let out = apl(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau_negative"));
}

#[test]
fn computation_errors_exit_1() {
    // Valid config, infeasible packing.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(
        &cfg,
        "[world]\nduration = [10.0, 10.0]\ninstances_per_video = [4, 4]\ninstance_length = [5.0, 5.0]\n",
    )
    .unwrap();
    let out = apl(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let ann = fixtures().join("small/annotations.json");
    let out: Value = serde_json::from_str(&ok(&[
        "eval",
        "--json",
        "--annotations",
        s(&ann),
        "--detections",
        s(&ann),
    ]))
    .unwrap();
    assert_eq!(out["map"]["average"].as_f64(), Some(1.0));
}

#[test]
fn apl_seed_overrides_config_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("small.toml");
    let run = |name: &str, seed: Option<&str>| {
        let out = tmp.path().join(name);
        let env: Vec<(&str, &str)> = seed.map(|v| ("APL_SEED", v)).into_iter().collect();
        let o = apl_env(&["simulate", "--config", s(&cfg), "--out", s(&out)], &env);
        assert!(o.status.success());
        std::fs::read(out.join("annotations.json")).unwrap()
    };
    let base = run("base", None);
    let three = run("three", Some("3"));
    assert_ne!(base, three);
    assert_eq!(three, run("three_again", Some("3")));
    let bad = apl_env(
        &["simulate", "--out", s(&tmp.path().join("x"))],
        &[("APL_SEED", "seven")],
    );
    assert_eq!(bad.status.code(), Some(2));
}

/// Two classes in a 2-d feature space plus a third with no labeled example.
struct RefineWorld {
    dir: tempfile::TempDir,
}

impl RefineWorld {
    fn new() -> Self {
        use apl_core::shell::formats::write_features;
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let a = |t: usize| vec![4.0 + 0.1 * (t as f64).sin(), 0.2 * (t as f64).cos()];
        let b = |t: usize| vec![0.2 * (t as f64).sin(), 4.0 + 0.1 * (t as f64).cos()];
        let frames = |spans: &[(usize, usize, char)]| -> Vec<Vec<f64>> {
            (0..60)
                .map(|t| {
                    spans
                        .iter()
                        .find(|(s, e, _)| (*s..=*e).contains(&t))
                        .map(|(_, _, c)| if *c == 'a' { a(t) } else { b(t) })
                        .unwrap_or(vec![0.0, 0.0])
                })
                .collect()
        };
        std::fs::create_dir(d.join("f")).unwrap();
        write_features(
            &d.join("f/lab.aplf"),
            &frames(&[(0, 9, 'a'), (20, 29, 'a'), (35, 44, 'b'), (50, 59, 'b')]),
        )
        .unwrap();
        write_features(
            &d.join("f/unl.aplf"),
            &frames(&[(0, 9, 'a'), (20, 29, 'b'), (40, 49, 'a')]),
        )
        .unwrap();
        let ann = json!({
            "classes": ["a", "b", "c"],
            "videos": {
                "lab": {"duration": 60.0, "fps": 1.0, "subset": "labeled", "annotations": [
                    {"segment": [0.0, 9.0], "label": "a"}, {"segment": [20.0, 29.0], "label": "a"},
                    {"segment": [35.0, 44.0], "label": "b"}, {"segment": [50.0, 59.0], "label": "b"}]},
                "unl": {"duration": 60.0, "fps": 1.0, "subset": "unlabeled", "annotations": [
                    {"segment": [0.0, 9.0], "label": "a"}, {"segment": [20.0, 29.0], "label": "b"},
                    {"segment": [40.0, 49.0], "label": "a"}]}
            }
        });
        std::fs::write(d.join("ann.json"), ann.to_string()).unwrap();
        let inst = |s: f64, e: f64, c: usize, score: f64| json!({"segment": [s, e], "class_index": c, "score": score, "video_id": "unl"});
        let pseudo = json!({
            "classes": ["a", "b", "c"],
            "provenance": {"stage": "hand-built"},
            "videos": {"unl": {
                // A consistent positive, then a positive whose features are class b.
                "positives": [inst(0.0, 9.0, 0, 0.9), inst(20.0, 29.0, 0, 0.8)],
                // A consistent candidate, then one of a class nobody labeled.
                "candidates": [inst(40.0, 49.0, 0, 0.3), inst(52.0, 55.0, 2, 0.2)],
                "rejected": [],
                "tau_pos": 0.5,
                "tau_neg": 0.15
            }}
        });
        std::fs::write(d.join("pseudo.json"), pseudo.to_string()).unwrap();
        ok(&[
            "icd-train",
            "--annotations",
            s(&d.join("ann.json")),
            "--features",
            s(&d.join("f")),
            "--out",
            s(&d.join("m.icd")),
        ]);
        RefineWorld { dir }
    }

    fn refine(&self, input: &str, output: &str, flags: &[&str]) -> BTreeMap<&'static str, Vec<(f64, usize)>> {
        let d = self.dir.path();
        let paths = [
            d.join(input),
            d.join("m.icd"),
            d.join("f"),
            d.join("ann.json"),
            d.join(output),
        ];
        let [pseudo, model, feats, ann, out] = paths.each_ref().map(|p| s(p));
        let mut args = vec![
            "refine",
            "--pseudo",
            pseudo,
            "--model",
            model,
            "--features",
            feats,
            "--annotations",
            ann,
            "--out",
            out,
        ];
        args.extend_from_slice(flags);
        ok(&args);
        let file = PseudoLabelFile::read(&d.join(output)).unwrap();
        let set = &file.videos["unl"];
        let key = |v: &[apl_core::Instance]| v.iter().map(|i| (i.segment.start(), i.class_index)).collect::<Vec<_>>();
        BTreeMap::from([
            ("positives", key(&set.positives)),
            ("candidates", key(&set.candidates)),
            ("rejected", key(&set.rejected)),
        ])
    }

    fn log(&self, output: &str) -> Vec<String> {
        let file = PseudoLabelFile::read(&self.dir.path().join(output)).unwrap();
        file.videos["unl"]
            .refinement_log
            .iter()
            .map(|e| e.action.to_string())
            .collect()
    }
}

#[test]
fn refine_flags_select_eap_mpp_or_both() {
    let w = RefineWorld::new();

    let eap = w.refine("pseudo.json", "eap.json", &["--eap-only"]);
    assert_eq!(eap["positives"], vec![(0.0, 0)]);
    assert_eq!(eap["candidates"], vec![(40.0, 0), (52.0, 2)]);
    assert_eq!(eap["rejected"], vec![(20.0, 0)]);

    let mpp = w.refine("pseudo.json", "mpp.json", &["--mpp-only"]);
    assert_eq!(mpp["positives"], vec![(0.0, 0), (20.0, 0), (40.0, 0)]);
    assert_eq!(mpp["candidates"], vec![(52.0, 2)]);

    let both = w.refine("pseudo.json", "both.json", &[]);
    assert_eq!(both["positives"], vec![(0.0, 0), (40.0, 0)]);
    assert_eq!(both["candidates"], vec![(52.0, 2)]);
    assert_eq!(both["rejected"], vec![(20.0, 0)]);
    assert_eq!(
        w.log("both.json"),
        ["kept", "eap_removed", "mpp_promoted", "unscorable"]
    );

    let again = w.refine("both.json", "again.json", &[]);
    assert_eq!(again, both);
}

#[test]
fn json_flag_switches_summary_format() {
    let ann = fixtures().join("small/annotations.json");
    let text = ok(&["eval", "--annotations", s(&ann), "--detections", s(&ann)]);
    assert!(text.contains("avg"));
    let v: Value = serde_json::from_str(&ok(&[
        "eval",
        "--annotations",
        s(&ann),
        "--detections",
        s(&ann),
        "--json",
    ]))
    .unwrap();
    assert!(v["map"]["per_threshold"].is_array());
}

#[test]
fn report_tabulates_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let ann = fixtures().join("small/annotations.json");
    let e = tmp.path().join("e.json");
    ok(&[
        "eval",
        "--annotations",
        s(&ann),
        "--detections",
        s(&ann),
        "--out",
        s(&e),
    ]);
    let out = ok(&["report", "--run", &format!("gt={}", s(&e))]);
    assert!(out.lines().nth(1).unwrap().starts_with("gt "), "{out}");
    let bad = apl(&["report", "--run", "nameonly"]);
    assert_eq!(bad.status.code(), Some(1));
}
