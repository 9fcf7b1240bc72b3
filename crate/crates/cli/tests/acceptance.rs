//! Acceptance gate. One line per criterion, non-zero exit if any fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use drifter_core::drift::{eval_stddev_outlier, DriftRule, MetricSeries, RuleOutcome};
use drifter_core::export::{render_exposition, MetricKind, MetricSample, MetricsServer, SnapshotCell};
use drifter_core::model::{FeatureName, FeatureValue, MiniBatch, Record};
use drifter_core::ranking::bench::bench_mi;
use drifter_core::ranking::{mutual_information_sparse, rank_batch, RankingConfig, SparseColumn};
use drifter_core::sketches::HllSketch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const BIN: &str = env!("CARGO_BIN_EXE_drifter");

// --- MI oracle: entropies from hash-map counts, natural log, converted ----

fn entropy<K: std::hash::Hash + Eq>(counts: &HashMap<K, u64>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn oracle_mi(x: &[Option<u32>], y: &[u8]) -> f64 {
    let mut hx = HashMap::new();
    let mut hy = HashMap::new();
    let mut hxy = HashMap::new();
    let mut n = 0u64;
    for (xv, &yv) in x.iter().zip(y) {
        if let Some(v) = xv {
            *hx.entry(*v).or_insert(0u64) += 1;
            *hy.entry(yv).or_insert(0u64) += 1;
            *hxy.entry((*v, yv)).or_insert(0u64) += 1;
            n += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    ((entropy(&hx, n) + entropy(&hy, n) - entropy(&hxy, n)) / std::f64::consts::LN_2).max(0.0)
}

fn mi_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=200usize);
        let arity = rng.gen_range(1..=8u32);
        let density = rng.gen_range(0.1..=1.0);
        let x: Vec<Option<u32>> = (0..n)
            .map(|_| rng.gen_bool(density).then(|| rng.gen_range(0..arity)))
            .collect();
        let y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2u8)).collect();
        let col = SparseColumn::from_dense(&x, arity).map_err(|e| e.to_string())?;
        let got = mutual_information_sparse(&col, &y).map_err(|e| e.to_string())?;
        let want = oracle_mi(&x, &y);
        let diff = (got - want).abs();
        worst = worst.max(diff);
        ensure!(diff <= 1e-9, "n={n} arity={arity}: sparse {got} vs oracle {want}");
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!("1000 instances, max |diff| {worst:.2e}, {secs:.2} s"))
}

fn mi_anchors() -> Outcome {
    let y: Vec<u8> = (0..1000).map(|i| (i % 2) as u8).collect();
    let x: Vec<Option<u32>> = y.iter().map(|&v| Some(u32::from(v))).collect();
    let one = mutual_information_sparse(&SparseColumn::from_dense(&x, 2).unwrap(), &y).unwrap();
    ensure!((one - 1.0).abs() <= 1e-12, "identical balanced columns gave {one}");

    let mut x = Vec::new();
    let mut y = Vec::new();
    for (xv, yv, c) in [(0u32, 0u8, 40), (0, 1, 10), (1, 0, 10), (1, 1, 40)] {
        x.extend(std::iter::repeat_n(Some(xv), c));
        y.extend(std::iter::repeat_n(yv, c));
    }
    let got = mutual_information_sparse(&SparseColumn::from_dense(&x, 2).unwrap(), &y).unwrap();
    let oracle = oracle_mi(&x, &y);
    ensure!((got - 0.278072).abs() <= 1e-6, "40/10/10/40 gave {got}");
    ensure!((got - oracle).abs() <= 1e-12, "oracle disagrees: {oracle}");
    Ok(format!("1 bit = {one}, 40/10/10/40 = {got:.9}"))
}

fn sparsity_benefit() -> Outcome {
    let densities = [0.01, 0.05, 0.1, 0.3, 0.5];
    let rows = bench_mi(1_000_000, &densities, 10, 7).map_err(|e| e.to_string())?;
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let sparse: Vec<f64> = rows.iter().map(|r| ms(r.sparse.median)).collect();
    let dense: Vec<f64> = rows.iter().map(|r| ms(r.dense.median)).collect();
    let low = dense[0] / sparse[0];
    let high = sparse[4] / dense[4];
    ensure!(low >= 5.0, "1% density speedup {low:.2}x < 5x");
    ensure!(high <= 1.5, "50% density sparse/dense {high:.2} > 1.5");
    ensure!(
        sparse.windows(2).all(|w| w[0] <= w[1]),
        "sparse medians not monotone: {sparse:?}"
    );
    let diff = rows.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max);
    ensure!(diff <= 1e-9, "sparse and dense disagree by {diff}");
    Ok(format!(
        "speedup at 1% {low:.1}x, sparse/dense at 50% {high:.2}, sparse medians ms {:?}",
        sparse.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    ))
}

fn hll_accuracy() -> Outcome {
    let mut summary = Vec::new();
    for (k, &n) in [1_000u64, 10_000, 100_000, 1_000_000].iter().enumerate() {
        let mut good = 0;
        for trial in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1_000 * k as u64 + trial);
            let offset: u64 = rng.gen();
            let mut s = HllSketch::new(12).unwrap();
            // distinct by construction
            for i in 0..n {
                s.insert_bytes(&(offset.wrapping_add(i)).to_le_bytes());
            }
            let rel = (s.estimate() - n as f64).abs() / n as f64;
            if rel <= 0.05 {
                good += 1;
            }
        }
        ensure!(good >= 48, "n={n}: only {good}/50 trials within 5%");
        summary.push(format!("{n}:{good}/50"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for pair in 0..200 {
        let p = rng.gen_range(4..=16u8);
        let (mut a, mut b, mut union) = (
            HllSketch::new(p).unwrap(),
            HllSketch::new(p).unwrap(),
            HllSketch::new(p).unwrap(),
        );
        for _ in 0..rng.gen_range(0..3000) {
            let v: u64 = rng.gen_range(0..5000);
            a.insert_bytes(&v.to_le_bytes());
            union.insert_bytes(&v.to_le_bytes());
        }
        for _ in 0..rng.gen_range(0..3000) {
            let v: u64 = rng.gen_range(2500..7500);
            b.insert_bytes(&v.to_le_bytes());
            union.insert_bytes(&v.to_le_bytes());
        }
        a.merge_from(&b).map_err(|e| e.to_string())?;
        ensure!(a.registers() == union.registers(), "pair {pair} (p={p}): merge differs from union");
    }
    Ok(format!("within 5%: {}; 200 merge pairs exact", summary.join(" ")))
}

// --- drift scenario through the replay binary ---------------------------

const WINDOW: i64 = 60_000;

fn drift_fixture() -> String {
    let mut out = String::new();
    for w in 0..20i64 {
        let present = if (12..15).contains(&w) { 40 } else { 90 };
        for i in 0..100i64 {
            let ts = 1_700_000_000_000 - 1_700_000_000_000 % WINDOW + w * WINDOW + i * 500;
            let f = if i < present { format!(" adv=a{}", i % 13) } else { String::new() };
            out.push_str(&format!("{} | ts:{ts} ctx=web{f} price:{}\n", (i / 3) % 2, (i % 17) as f64 * 0.25));
        }
    }
    out
}

const DRIFT_CONFIG: &str = r#"
[source]
format = "vw"

[source.window]
mode = "by_time"
millis = 60000

[[rules]]
kind = "relative_delta"
metric = "coverage"
offset_millis = 60000
window_millis = 60000
threshold = 25.0
"#;

fn replay(config: &Path, input: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(BIN)
        .args(["replay", "--config"])
        .arg(config)
        .arg("--input")
        .arg(input)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "error")
        .status()
        .map_err(|e| e.to_string())?;
    ensure!(status.success(), "replay exited with {status}");
    Ok(())
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().display().to_string();
        out.insert(rel, fs::read(&entry).unwrap());
    }
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

fn drift_scenario() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = tmp.path().join("stream.vw");
    let config = tmp.path().join("drift.toml");
    fs::write(&input, drift_fixture()).unwrap();
    fs::write(&config, DRIFT_CONFIG).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    replay(&config, &input, &a)?;
    replay(&config, &input, &b)?;

    let log = fs::read_to_string(a.join("alerts.jsonl")).unwrap();
    let events: Vec<serde_json_lite::Event> = log.lines().map(serde_json_lite::parse).collect::<Result<_, _>>()?;
    let windows: Vec<u64> = events.iter().map(|e| e.window_id).collect();
    ensure!(windows == vec![12, 15], "alerts at windows {windows:?}");
    ensure!(
        events.iter().all(|e| e.feature == "adv" && e.kind == "relative_delta" && e.metric == "coverage"),
        "unexpected events: {log}"
    );
    let dumps = fs::read_dir(a.join("windows")).unwrap().count();
    ensure!(dumps == 20, "{dumps} window dumps");
    ensure!(
        fs::read(a.join("alerts.jsonl")).unwrap() == fs::read(b.join("alerts.jsonl")).unwrap(),
        "alert logs differ between replays"
    );
    ensure!(tree(&a) == tree(&b), "output trees differ between replays");
    Ok(format!("alerts at windows {windows:?}, replays byte-identical"))
}

/// Just enough JSON for the alert lines; keeps the check independent of the
/// crate's own serializer.
mod serde_json_lite {
    pub struct Event {
        pub kind: String,
        pub feature: String,
        pub metric: String,
        pub window_id: u64,
    }

    fn field<'a>(line: &'a str, key: &str) -> Result<&'a str, String> {
        let pat = format!("\"{key}\":");
        let start = line.find(&pat).ok_or_else(|| format!("no {key} in {line}"))? + pat.len();
        let rest = &line[start..];
        let end = if let Some(s) = rest.strip_prefix('"') {
            return Ok(&s[..s.find('"').ok_or("unterminated string")?]);
        } else {
            rest.find([',', '}']).ok_or("unterminated value")?
        };
        Ok(&rest[..end])
    }

    pub fn parse(line: &str) -> Result<Event, String> {
        Ok(Event {
            kind: field(line, "kind")?.to_string(),
            feature: field(line, "feature")?.to_string(),
            metric: field(line, "metric")?.to_string(),
            window_id: field(line, "window_id")?.parse().map_err(|e| format!("{e}"))?,
        })
    }
}

fn outlier_anchor() -> Outcome {
    const W: i64 = 1_000;
    let series = |values: &[f64]| {
        let mut s = MetricSeries::new("coverage", "f", 64).unwrap();
        for (i, v) in values.iter().enumerate() {
            s.append((i as i64 + 1) * W, *v).unwrap();
        }
        s
    };
    let rule = DriftRule::stddev_outlier("coverage", 4 * W, 0.5).unwrap();
    let fired = eval_stddev_outlier(&series(&[0.0, 10.0, 0.0, 10.0]), &rule, 4 * W, 0).unwrap();
    let RuleOutcome::Fired(e) = fired else {
        return Err(format!("[0,10,0,10] did not fire: {fired:?}"));
    };
    ensure!(e.observed == 5.0 && e.reference == 5.0, "stddev {} mean {}", e.observed, e.reference);

    let mut checked = 0;
    for c in [0.0, 1.0, -3.5, 0.9, 1e6, 1e-9] {
        for coef in [1e-6, 0.01, 0.5, 1.0, 10.0] {
            let rule = DriftRule::stddev_outlier("coverage", 8 * W, coef).unwrap();
            let out = eval_stddev_outlier(&series(&[c; 8]), &rule, 8 * W, 0).unwrap();
            ensure!(out == RuleOutcome::Quiet, "constant {c} fired at coefficient {coef}");
            checked += 1;
        }
    }
    Ok(format!("[0,10,0,10] fires (stddev 5 > 2.5); {checked} constant cases quiet"))
}

// --- resource envelope ---------------------------------------------------

fn write_big_stream(mut w: impl Write, records: u64) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2_023);
    let densities: Vec<f64> = (0..100).map(|j| 0.05 + 0.5 * j as f64 / 99.0).collect();
    let mut line = String::with_capacity(1024);
    for i in 0..records {
        line.clear();
        let label = u8::from(rng.gen_bool(0.3));
        line.push_str(&format!("{label} | ts:{}", 1_700_000_000_000 + i as i64 * 6));
        for (j, &d) in densities.iter().enumerate() {
            if !rng.gen_bool(d) {
                continue;
            }
            if j % 2 == 0 {
                let v: f64 = rng.gen_range(-50.0..50.0) + label as f64;
                line.push_str(&format!(" n{j:02}:{v:.3}"));
            } else {
                let card = 10u32.pow(1 + (j as u32 % 4));
                line.push_str(&format!(" c{j:02}=v{}", rng.gen_range(0..card)));
            }
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

fn status_field(pid: u32, key: &str) -> Option<u64> {
    let text = fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

fn resource_envelope() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("big.toml");
    fs::write(
        &config,
        "[source]\nformat = \"vw\"\n\n[source.window]\nmode = \"by_time\"\nmillis = 60000\n",
    )
    .unwrap();
    let started = Instant::now();
    let mut child = Command::new(BIN)
        .args(["replay", "--input", "-", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .env("RUST_LOG", "error")
        .stdin(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let pid = child.id();
    let stdin = child.stdin.take().unwrap();
    let writer = std::thread::spawn(move || write_big_stream(BufWriter::with_capacity(1 << 20, stdin), 1_000_000));

    let mut max_threads = 0;
    let mut max_hwm_kb = 0;
    let status = loop {
        if let Some(t) = status_field(pid, "Threads:") {
            max_threads = max_threads.max(t);
        }
        if let Some(h) = status_field(pid, "VmHWM:") {
            max_hwm_kb = max_hwm_kb.max(h);
        }
        if let Some(s) = child.try_wait().map_err(|e| e.to_string())? {
            break s;
        }
        std::thread::sleep(Duration::from_millis(20));
    };
    writer.join().unwrap().map_err(|e| format!("feeding stdin: {e}"))?;
    ensure!(status.success(), "replay exited with {status}");
    // exact peak of the largest reaped child
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    unsafe { libc::getrusage(libc::RUSAGE_CHILDREN, &mut usage) };
    let peak_kb = max_hwm_kb.max(usage.ru_maxrss as u64);
    let secs = started.elapsed().as_secs_f64();
    let windows = fs::read_dir(tmp.path().join("out/windows")).unwrap().count();
    let last = fs::read_to_string(tmp.path().join(format!("out/windows/{:06}.prom", windows - 1))).unwrap();
    ensure!(
        last.contains("drifter_records_processed_total 1000000\n"),
        "records counter wrong in final dump"
    );
    ensure!(peak_kb < 1_000_000, "peak RSS {peak_kb} kB");
    ensure!(max_threads <= 2, "{max_threads} threads observed");
    ensure!(secs < 300.0, "took {secs:.1} s");
    Ok(format!(
        "1e6 records x 100 features in {secs:.1} s, {windows} windows, peak RSS {} MB, max threads {max_threads}",
        peak_kb / 1024
    ))
}

// --- exposition conformance ----------------------------------------------

/// Independent parser for the text exposition format. Any deviation from
/// the grammar is an error.
mod expo {
    #[derive(Debug, Clone, PartialEq)]
    pub struct Sample {
        pub name: String,
        pub kind: String,
        pub labels: Vec<(String, String)>,
        pub value: f64,
    }

    fn is_name(s: &str, colon: bool) -> bool {
        let mut c = s.chars();
        matches!(c.next(), Some(x) if x.is_ascii_alphabetic() || x == '_' || (colon && x == ':'))
            && c.all(|x| x.is_ascii_alphanumeric() || x == '_' || (colon && x == ':'))
    }

    fn value(s: &str) -> Result<f64, String> {
        match s {
            "NaN" => Ok(f64::NAN),
            "+Inf" => Ok(f64::INFINITY),
            "-Inf" => Ok(f64::NEG_INFINITY),
            _ => s.parse().map_err(|_| format!("bad value {s:?}")),
        }
    }

    fn labels(s: &str) -> Result<(Vec<(String, String)>, &str), String> {
        let mut out = Vec::new();
        let mut rest = s;
        loop {
            if let Some(r) = rest.strip_prefix('}') {
                return Ok((out, r));
            }
            let eq = rest.find('=').ok_or("label without '='")?;
            let name = &rest[..eq];
            if !is_name(name, false) {
                return Err(format!("bad label name {name:?}"));
            }
            let mut chars = rest[eq + 1..].char_indices();
            if chars.next().map(|c| c.1) != Some('"') {
                return Err("label value not quoted".into());
            }
            let mut v = String::new();
            let mut end = None;
            while let Some((i, c)) = chars.next() {
                match c {
                    '\\' => match chars.next().map(|c| c.1) {
                        Some('\\') => v.push('\\'),
                        Some('"') => v.push('"'),
                        Some('n') => v.push('\n'),
                        other => return Err(format!("bad escape {other:?}")),
                    },
                    '"' => {
                        end = Some(eq + 1 + i + 1);
                        break;
                    }
                    '\n' => return Err("raw newline in label value".into()),
                    c => v.push(c),
                }
            }
            let end = end.ok_or("unterminated label value")?;
            out.push((name.to_string(), v));
            rest = &rest[end..];
            if let Some(r) = rest.strip_prefix(',') {
                rest = r;
                if rest.starts_with('}') {
                    return Err("trailing comma".into());
                }
            } else if !rest.starts_with('}') {
                return Err("expected ',' or '}'".into());
            }
        }
    }

    pub fn parse(doc: &str) -> Result<Vec<Sample>, String> {
        let mut out = Vec::new();
        let mut types: Vec<(String, String)> = Vec::new();
        if !doc.is_empty() && !doc.ends_with('\n') {
            return Err("document does not end with newline".into());
        }
        for line in doc.lines() {
            if let Some(rest) = line.strip_prefix("# TYPE ") {
                let mut parts = rest.split(' ');
                let (name, kind) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
                if parts.next().is_some() || !is_name(name, true) || !["gauge", "counter"].contains(&kind) {
                    return Err(format!("bad TYPE line {line:?}"));
                }
                if types.iter().any(|(n, _)| n == name) {
                    return Err(format!("duplicate TYPE for {name}"));
                }
                types.push((name.to_string(), kind.to_string()));
                continue;
            }
            if line.starts_with('#') || line.is_empty() {
                return Err(format!("unexpected line {line:?}"));
            }
            let name_end = line.find(['{', ' ']).ok_or("sample without value")?;
            let name = &line[..name_end];
            let (labels, rest) = if line[name_end..].starts_with('{') {
                labels(&line[name_end + 1..])?
            } else {
                (Vec::new(), &line[name_end..])
            };
            let v = rest.strip_prefix(' ').ok_or("missing space before value")?;
            if v.contains(' ') {
                return Err(format!("timestamp or junk after value: {line:?}"));
            }
            let (family, kind) = types.last().ok_or("sample before any TYPE")?;
            if family != name {
                return Err(format!("sample {name} outside its family block {family}"));
            }
            out.push(Sample {
                name: name.to_string(),
                kind: kind.clone(),
                labels,
                value: value(v)?,
            });
        }
        Ok(out)
    }
}

fn same_value(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a.to_bits() == b.to_bits() || (a == 0.0 && b == 0.0)
}

fn random_label_value(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[&str] = &["a", "Z", "0", "_", " ", "\"", "\\", "\n", "é", "{", "}", ",", "=", "#", "ß"];
    (0..rng.gen_range(0..12))
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
        .collect()
}

fn random_samples(rng: &mut ChaCha8Rng) -> Vec<MetricSample> {
    let families = ["drifter_feature_coverage", "drifter_feature_quantile", "a:b_c", "_x", "drifter_alerts_total"];
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for _ in 0..rng.gen_range(0..40) {
        let fam = families[rng.gen_range(0..families.len())];
        let kind = if fam.ends_with("_total") { MetricKind::Counter } else { MetricKind::Gauge };
        let mut labels: Vec<(String, String)> = Vec::new();
        for k in ["feature", "q", "kind"] {
            if rng.gen_bool(0.6) {
                labels.push((k.to_string(), random_label_value(rng)));
            }
        }
        let value = match rng.gen_range(0..8) {
            0 => f64::NAN,
            1 => f64::INFINITY,
            2 => f64::NEG_INFINITY,
            3 => rng.gen_range(-1e300..1e300),
            4 => rng.gen_range(-1e-300..1e-300),
            5 => rng.gen_range(0..1_000_000) as f64,
            _ => rng.gen(),
        };
        let key = (fam, labels.clone());
        if seen.insert(key) {
            out.push(MetricSample::new(fam, labels, value, kind).unwrap());
        }
    }
    out
}

fn exposition_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut lines = 0;
    for round in 0..1000 {
        let samples = random_samples(&mut rng);
        let doc = render_exposition(&samples);
        let parsed = expo::parse(&doc).map_err(|e| format!("round {round}: {e}\n{doc}"))?;
        ensure!(parsed.len() == samples.len(), "round {round}: sample count changed");
        for s in &samples {
            let found = parsed
                .iter()
                .any(|p| p.name == s.name() && p.labels == s.labels() && p.kind == s.kind().as_str() && same_value(p.value, s.value()));
            ensure!(found, "round {round}: sample {s:?} lost");
        }
        let rebuilt: Vec<MetricSample> = parsed
            .iter()
            .map(|p| {
                let kind = if p.kind == "counter" { MetricKind::Counter } else { MetricKind::Gauge };
                MetricSample::new(p.name.clone(), p.labels.clone(), p.value, kind).unwrap()
            })
            .collect();
        ensure!(render_exposition(&rebuilt) == doc, "round {round}: second render differs");
        lines += doc.lines().count();
    }

    let (scrapes, windows) = hammer(10_000)?;
    Ok(format!(
        "1000 documents ({lines} lines) fixed point; {scrapes} concurrent scrapes over {windows} publications all single-window"
    ))
}

fn window_samples(id: u64) -> Vec<MetricSample> {
    let v = id as f64;
    let mut out = vec![MetricSample::gauge("drifter_window_id", &[], v).unwrap()];
    for f in 0..50 {
        let name = format!("f{f:02}");
        out.push(MetricSample::gauge("drifter_feature_coverage", &[("feature", name.as_str())], v).unwrap());
        out.push(MetricSample::gauge("drifter_feature_cardinality", &[("feature", name.as_str())], v).unwrap());
    }
    out.push(MetricSample::counter("drifter_records_processed_total", &[], v).unwrap());
    out
}

fn scrape(addr: SocketAddr) -> Result<String, String> {
    let mut s = TcpStream::connect(addr).map_err(|e| e.to_string())?;
    s.write_all(b"GET /metrics HTTP/1.1\r\nHost: localhost\r\n\r\n").map_err(|e| e.to_string())?;
    let mut text = String::new();
    s.read_to_string(&mut text).map_err(|e| e.to_string())?;
    let (head, body) = text.split_once("\r\n\r\n").ok_or("no header terminator")?;
    ensure!(head.starts_with("HTTP/1.1 200"), "status line {head:?}");
    ensure!(head.contains("Content-Type: text/plain; version=0.0.4"), "content type missing");
    Ok(body.to_string())
}

fn hammer(iterations: usize) -> Result<(usize, u64), String> {
    let server = MetricsServer::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let handle = server.handle().map_err(|e| e.to_string())?;
    let cell = Arc::new(SnapshotCell::new(window_samples(0)));
    let serving = {
        let cell = cell.clone();
        std::thread::spawn(move || server.serve(cell))
    };
    let done = Arc::new(AtomicBool::new(false));
    let published = Arc::new(AtomicU64::new(0));
    let publisher = {
        let (cell, done, published) = (cell.clone(), done.clone(), published.clone());
        std::thread::spawn(move || {
            let mut id = 0;
            while !done.load(Ordering::SeqCst) {
                id += 1;
                cell.publish(window_samples(id));
                published.store(id, Ordering::SeqCst);
            }
        })
    };
    let result = (|| {
        let mut last = 0.0;
        for i in 0..iterations {
            let body = scrape(handle.addr())?;
            let parsed = expo::parse(&body).map_err(|e| format!("scrape {i}: {e}"))?;
            ensure!(parsed.len() == 102, "scrape {i}: {} samples", parsed.len());
            let id = parsed[0].value;
            ensure!(parsed.iter().all(|s| s.value == id), "scrape {i} mixes windows");
            ensure!(id >= last, "scrape {i} went back from window {last} to {id}");
            last = id;
        }
        Ok(())
    })();
    done.store(true, Ordering::SeqCst);
    publisher.join().unwrap();
    handle.stop();
    serving.join().unwrap();
    result.map(|_| (iterations, published.load(Ordering::SeqCst)))
}

// --- interaction cap -----------------------------------------------------

fn cap_batch(features: usize, rows: usize, seed: u64) -> (MiniBatch, BTreeMap<String, SparseColumn>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..rows)
        .map(|i| Record::new(BTreeMap::<FeatureName, FeatureValue>::new(), Some((i % 2) as u8), i as i64).unwrap())
        .collect();
    let batch = MiniBatch::new(records, 0, 0, rows as i64).unwrap();
    let cols = (0..features)
        .map(|f| {
            let dense: Vec<Option<u32>> = (0..rows)
                .map(|_| rng.gen_bool(0.4).then(|| rng.gen_range(0..1u32 << 20)))
                .collect();
            (format!("f{f:03}"), SparseColumn::from_dense(&dense, 1 << 20).unwrap())
        })
        .collect();
    (batch, cols)
}

fn interaction_cap() -> Outcome {
    let mut cells = Vec::new();
    for features in [10usize, 100, 500] {
        let (batch, cols) = cap_batch(features, 40, features as u64);
        for cap in [10usize, 50, 1_000_000] {
            let cfg = RankingConfig {
                interaction_cap: cap,
                seed: 17,
                ..Default::default()
            };
            let r = rank_batch(&batch, &cols, &cfg).map_err(|e| e.to_string())?;
            let expected = cap.min(features * (features - 1) / 2);
            ensure!(r.evaluated_pairs == expected, "F={features} K={cap}: {} pairs", r.evaluated_pairs);
            ensure!(r.interaction_scores.len() == expected, "F={features} K={cap}: score map size");
            let again = rank_batch(&batch, &cols, &cfg).map_err(|e| e.to_string())?;
            ensure!(again == r, "F={features} K={cap}: not deterministic");
            cells.push(format!("{features}/{cap}:{expected}"));
        }
    }
    Ok(cells.join(" "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("mi_oracle_equivalence", mi_oracle_equivalence),
        ("mi_anchors", mi_anchors),
        ("sparsity_benefit", sparsity_benefit),
        ("hll_accuracy_and_merge", hll_accuracy),
        ("drift_scenario_replay", drift_scenario),
        ("outlier_rule_anchor", outlier_anchor),
        ("resource_envelope", resource_envelope),
        ("exposition_conformance", exposition_conformance),
        ("interaction_cap", interaction_cap),
    ];
    let only: Option<String> = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, check) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
