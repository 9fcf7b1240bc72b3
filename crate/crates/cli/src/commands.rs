use std::fs;
use std::io::{self, Read};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use drifter_core::engine::{idle_metrics, snapshot_metrics, Engine, WindowSnapshot};
use drifter_core::export::{render_exposition, AlertLog, MetricsServer, SnapshotCell};
use drifter_core::ingest::{open_reader, Batcher, RecordReader, TimeSource};
use drifter_core::ranking::bench::{bench_mi, render_csv, validate_densities};

use crate::config::CliConfig;
use crate::interrupt::Interruptible;
use crate::Failure;

fn open_input(path: &str, stop: Option<Arc<AtomicBool>>) -> io::Result<Box<dyn Read + 'static>> {
    if path == "-" {
        let stdin = io::stdin();
        return Ok(match stop {
            Some(flag) => Box::new(Interruptible::new(stdin, flag)),
            None => Box::new(stdin),
        });
    }
    let file = fs::File::open(path)?;
    Ok(match stop {
        Some(flag) => Box::new(Interruptible::new(file, flag)),
        None => Box::new(file),
    })
}

fn batcher(cfg: &CliConfig, input: Box<dyn Read>, time: TimeSource) -> anyhow::Result<Batcher> {
    let reader = open_reader(input, cfg.source.compression).context("opening input")?;
    Ok(Batcher::new(RecordReader::new(reader, cfg.source.format, time), cfg.source.window)?)
}

fn log_events(s: &WindowSnapshot) {
    for e in &s.events {
        log::warn!(
            "window {}: {} on {}{}{} ({} vs {})",
            e.window_id,
            e.kind.as_str(),
            e.metric,
            if e.feature.is_empty() { "" } else { " of " },
            e.feature,
            e.observed,
            e.reference
        );
    }
}

/// Live service: this thread ingests and processes, a second one serves
/// scrapes. Runs until a termination signal arrives.
pub fn run(cfg: &CliConfig) -> Result<(), Failure> {
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, stop.clone()).map_err(|e| Failure::Runtime(e.into()))?;
    }
    let server = MetricsServer::bind((cfg.bind.as_str(), cfg.port))
        .with_context(|| format!("cannot bind {}:{}", cfg.bind, cfg.port))
        .map_err(Failure::Runtime)?;
    let handle = server.handle().map_err(|e| Failure::Runtime(e.into()))?;
    log::info!("serving metrics on http://{}/metrics", server.local_addr().map_err(|e| Failure::Runtime(e.into()))?);
    let cell = Arc::new(SnapshotCell::new(idle_metrics(&Default::default())));
    let exporter = {
        let cell = cell.clone();
        std::thread::Builder::new()
            .name("exporter".into())
            .spawn(move || server.serve(cell))
            .map_err(|e| Failure::Runtime(e.into()))?
    };

    let result = ingest_loop(cfg, &cell, &stop);
    if result.is_ok() && !stop.load(Ordering::SeqCst) {
        log::info!("input exhausted; serving until terminated");
        while !stop.load(Ordering::SeqCst) {
            std::thread::sleep(Duration::from_millis(100));
        }
    }
    handle.stop();
    let _ = exporter.join();
    log::info!("shut down");
    result.map_err(Failure::Runtime)
}

fn ingest_loop(cfg: &CliConfig, cell: &SnapshotCell, stop: &Arc<AtomicBool>) -> anyhow::Result<()> {
    let mut engine = Engine::new(cfg.engine.clone())?;
    let mut alerts = AlertLog::open(Path::new(&cfg.alert_log), false)
        .with_context(|| format!("cannot open alert log {}", cfg.alert_log))?;
    let input = open_input(&cfg.source.path, Some(stop.clone()))
        .with_context(|| format!("cannot open input {}", cfg.source.path))?;
    let mut batches = batcher(cfg, input, TimeSource::Wall)?;
    let mut last: Option<WindowSnapshot> = None;
    loop {
        let next = match batches.next_batch() {
            Ok(n) => n,
            // a truncated read after the stop flag is just the shutdown
            Err(_) if stop.load(Ordering::SeqCst) => None,
            Err(e) => return Err(e.into()),
        };
        let Some(w) = next else { break };
        let snap = engine.process_window(&w.batch, &w.parse)?;
        log_events(&snap);
        cell.publish(snapshot_metrics(&snap, true));
        alerts.append(&snap.events)?;
        alerts.sync()?;
        log::info!(
            "window {}: {} records, {} features, {:.1} ms",
            snap.window_id,
            snap.records,
            snap.profiles.len(),
            snap.processing_millis
        );
        last = Some(snap);
    }
    engine.absorb_parse_stats(&batches.take_unattached_stats());
    let final_metrics = match last {
        Some(mut s) => {
            s.counters = engine.counters().clone();
            snapshot_metrics(&s, true)
        }
        None => idle_metrics(engine.counters()),
    };
    cell.publish(final_metrics);
    alerts.sync()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplaySummary {
    pub windows: u64,
    pub records: u64,
    pub alerts: u64,
}

/// Writes `windows/<id>.prom` per window and `alerts.jsonl` under `out`.
pub fn replay(cfg: &CliConfig, input: &str, out: &Path) -> Result<ReplaySummary, Failure> {
    let source = open_input(input, None)
        .with_context(|| format!("cannot open input {input}"))
        .map_err(Failure::Runtime)?;
    replay_from(cfg, source, out).map_err(Failure::Runtime)
}

fn replay_from(cfg: &CliConfig, input: Box<dyn Read>, out: &Path) -> anyhow::Result<ReplaySummary> {
    let windows_dir = out.join("windows");
    fs::create_dir_all(&windows_dir).with_context(|| format!("cannot create {}", windows_dir.display()))?;
    // stale dumps from an earlier replay would break the output contract
    for entry in fs::read_dir(&windows_dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "prom") {
            fs::remove_file(&path)?;
        }
    }
    let mut alerts = AlertLog::open(&out.join("alerts.jsonl"), true)?;
    let mut engine = Engine::new(cfg.engine.clone())?;
    let mut batches = batcher(cfg, input, TimeSource::RecordTime)?;
    let mut summary = ReplaySummary::default();
    while let Some(w) = batches.next_batch()? {
        let snap = engine.process_window(&w.batch, &w.parse)?;
        log_events(&snap);
        let doc = render_exposition(&snapshot_metrics(&snap, false));
        fs::write(windows_dir.join(format!("{:06}.prom", snap.window_id)), doc)?;
        alerts.append(&snap.events)?;
        alerts.sync()?;
        summary.windows += 1;
        summary.records += snap.records;
        summary.alerts += snap.events.len() as u64;
    }
    engine.absorb_parse_stats(&batches.take_unattached_stats());
    alerts.sync()?;
    let stats = batches.stats();
    if let Some((line, msg)) = &stats.first_error {
        log::warn!("{} lines rejected; first at line {line}: {msg}", stats.lines_rejected);
    }
    Ok(summary)
}

pub fn bench(n: usize, densities: &[f64], repeats: usize, seed: u64) -> Result<String, Failure> {
    validate_densities(densities).map_err(|e| Failure::Usage(e.to_string()))?;
    if repeats == 0 {
        return Err(Failure::Usage("repeats must be at least 1".into()));
    }
    if n == 0 {
        return Err(Failure::Usage("n must be at least 1".into()));
    }
    let rows = bench_mi(n, densities, repeats, seed).map_err(|e| Failure::Runtime(anyhow!(e)))?;
    Ok(render_csv(&rows))
}
