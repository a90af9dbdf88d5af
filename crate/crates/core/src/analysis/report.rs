//! Report bundle: `tables/*.csv`, `figures/*.svg` and `report.md`.
//!
//! Rendering is a pure function of its input, so identical inputs give
//! byte-identical bundles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::config::Condition;
use crate::metrics::{decompose_all, write_decomposition_csv, write_run_table, BestSoFarCurve, RunSummary};
use crate::search::RunLog;
use crate::stats::{
    adjust_families, bootstrap_ci, cohens_d, fisher_exact, gower_matrix, mann_whitney_u, permutation_cluster_test,
    welch_t, write_stats_csv, FeatureVector, StatReport,
};

use super::{
    extract_features, summarize_innovations, techniques::TechniqueRegistry, Classification, FreezePoint, Innovation,
    LengthMatch, TransferCell,
};

#[derive(Debug, Clone, Default)]
pub struct ReportInput {
    /// Per-run rows, from logs and/or a results table.
    pub runs: Vec<RunSummary>,
    /// Full logs: curves, keep rates, clustering and techniques need these.
    pub logs: Vec<RunLog>,
    /// Holm families: name to members of the form `"<comparison>/<test>"`.
    /// `None` groups each track's tests of one kind into a family.
    pub families: Option<BTreeMap<String, Vec<String>>>,
    pub transfer: Vec<TransferCell>,
    /// Named freezing curves.
    pub freeze: Vec<(String, Vec<FreezePoint>)>,
    pub length_match: Vec<LengthMatch>,
    pub innovations: Vec<Innovation>,
}

impl ReportInput {
    /// Rows and curves from logs alone.
    pub fn from_logs(logs: Vec<RunLog>) -> Self {
        Self { runs: logs.iter().map(RunSummary::from_log).collect(), logs, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub bootstrap_resamples: usize,
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { bootstrap_resamples: 10_000, n_perm: 10_000, seed: 0 }
    }
}

/// Relative path → contents, plus warnings about skipped sections.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportFiles {
    pub files: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

const COMPARISONS: [(Condition, Condition); 2] =
    [(Condition::Agent, Condition::HpOnly), (Condition::Agent, Condition::RandomNas)];

fn csv_string(write: impl FnOnce(&mut Vec<u8>) -> Result<(), String>) -> String {
    let mut buf = Vec::new();
    write(&mut buf).expect("in-memory csv");
    String::from_utf8(buf).expect("csv is utf-8")
}

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    csv_string(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(header).map_err(|e| e.to_string())?;
        for r in rows {
            w.write_record(&r).map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn by_track_condition(runs: &[RunSummary]) -> BTreeMap<String, BTreeMap<Condition, Vec<&RunSummary>>> {
    let mut out: BTreeMap<String, BTreeMap<Condition, Vec<&RunSummary>>> = BTreeMap::new();
    for r in runs {
        out.entry(r.track.clone()).or_default().entry(r.condition).or_default().push(r);
    }
    out
}

struct Comparison {
    track: String,
    a: Condition,
    b: Condition,
    auc_a: Vec<f64>,
    auc_b: Vec<f64>,
    d: Option<f64>,
    welch: Option<usize>,
    mwu: Option<usize>,
}

fn label(track: &str, a: Condition, b: Condition) -> String {
    format!("{track}: {a} vs {b}")
}

/// AUC comparisons, keep-rate tests and the clustering test, Holm-adjusted.
fn run_stats(input: &ReportInput, opts: &ReportOptions, warnings: &mut Vec<String>) -> (Vec<StatReport>, Vec<Comparison>) {
    let mut reports = Vec::new();
    let mut comparisons = Vec::new();
    for (track, by) in by_track_condition(&input.runs) {
        for (a, b) in COMPARISONS {
            let auc = |c| by.get(&c).map(|rs| rs.iter().map(|r| r.auc_oc).collect::<Vec<f64>>()).unwrap_or_default();
            let (auc_a, auc_b) = (auc(a), auc(b));
            if auc_a.is_empty() && auc_b.is_empty() {
                continue;
            }
            let cmp_label = label(&track, a, b);
            let mut c = Comparison { track: track.clone(), a, b, d: None, welch: None, mwu: None, auc_a, auc_b };
            if c.auc_a.len() < 2 || c.auc_b.len() < 2 {
                warnings.push(format!("{cmp_label}: insufficient-n ({} vs {} runs)", c.auc_a.len(), c.auc_b.len()));
                comparisons.push(c);
                continue;
            }
            c.d = cohens_d(&c.auc_a, &c.auc_b).ok();
            let tests = [
                welch_t(&c.auc_a, &c.auc_b).map(|mut r| {
                    r.effect_size = c.d;
                    r
                }),
                mann_whitney_u(&c.auc_a, &c.auc_b),
                bootstrap_ci(&c.auc_a, &c.auc_b, opts.bootstrap_resamples, opts.seed),
            ];
            for t in tests {
                match t {
                    Ok(r) => {
                        let slot = reports.len();
                        match r.test.as_str() {
                            "welch_t" => c.welch = Some(slot),
                            "mann_whitney_u" => c.mwu = Some(slot),
                            _ => {}
                        }
                        reports.push(r.labelled(cmp_label.clone()));
                    }
                    Err(e) => warnings.push(format!("{cmp_label}: {e}")),
                }
            }
            comparisons.push(c);
        }
    }

    // Keep rates, pooled over each condition's logs.
    let mut pooled: BTreeMap<(String, Condition), (u64, u64)> = BTreeMap::new();
    for log in &input.logs {
        let k = crate::metrics::keep_rate(log);
        let e = pooled.entry((log.header.track.to_string(), log.header.condition)).or_default();
        e.0 += k.kept as u64;
        e.1 += (k.eligible - k.kept) as u64;
    }
    let tracks: BTreeSet<String> = pooled.keys().map(|(t, _)| t.clone()).collect();
    for track in tracks {
        let (a, b) = (Condition::Agent, Condition::RandomNas);
        if let (Some(x), Some(y)) = (pooled.get(&(track.clone(), a)), pooled.get(&(track.clone(), b))) {
            let cmp_label = format!("{} keep_rate", label(&track, a, b));
            match fisher_exact([[x.0, x.1], [y.0, y.1]]) {
                Ok(r) => reports.push(r.labelled(cmp_label)),
                Err(e) => warnings.push(format!("{cmp_label}: {e}")),
            }
        }
    }

    // Families: user-supplied, or one per (track, test).
    let key = |r: &StatReport| format!("{}/{}", r.comparison, r.test);
    match &input.families {
        Some(fams) => {
            let mut lookup: BTreeMap<&str, &str> = BTreeMap::new();
            for (name, members) in fams {
                for m in members {
                    lookup.insert(m, name);
                }
            }
            for r in reports.iter_mut() {
                r.family = lookup.get(key(r).as_str()).map(|s| s.to_string());
            }
        }
        None => {
            for r in reports.iter_mut() {
                let track = r.comparison.split(':').next().unwrap_or_default();
                r.family = Some(format!("{track}/{}", r.test));
            }
        }
    }

    let features: Vec<FeatureVector> = input
        .logs
        .iter()
        .filter(|l| l.header.condition == Condition::Agent)
        .filter_map(|l| extract_features(l).ok())
        .collect();
    if features.len() >= 2 {
        let labels: Vec<String> = features.iter().map(|f| f.track.clone()).collect();
        match gower_matrix(&features).and_then(|m| permutation_cluster_test(&m, &labels, opts.n_perm, opts.seed)) {
            Ok(r) => reports.push(r.labelled("clustering: agent best architectures by track")),
            Err(e) => warnings.push(format!("clustering: {e}")),
        }
    }
    adjust_families(&mut reports);
    (reports, comparisons)
}

fn color(c: Condition) -> &'static str {
    match c {
        Condition::Agent => "#1f77b4",
        Condition::RandomNas => "#ff7f0e",
        Condition::HpOnly => "#2ca02c",
        Condition::FixedDefault => "#7f7f7f",
    }
}

/// Best-so-far curves of one track as a plain SVG line chart.
pub(crate) fn curves_svg(title: &str, curves: &[(Condition, &BestSoFarCurve)]) -> String {
    let (w, h, left, top, pw, ph) = (640.0, 400.0, 70.0, 40.0, 540.0, 300.0);
    let finite = curves.iter().flat_map(|(_, c)| c.values.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let n = curves.iter().map(|(_, c)| c.values.len()).max().unwrap_or(1).max(2);
    let x = |i: usize| left + pw * i as f64 / (n - 1) as f64;
    let y = |v: f64| top + ph * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="15" text-anchor="middle" font-family="sans-serif">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for (v, anchor_y) in [(hi, top), (lo, top + ph)] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end" font-family="sans-serif">{v:.4}</text>"#, left - 6.0, anchor_y + 4.0);
    }
    for (i, txt) in [(0, "1".to_string()), (n - 1, n.to_string())] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" font-family="sans-serif">{txt}</text>"#, x(i), top + ph + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle" font-family="sans-serif">experiment</text>"#, left + pw / 2.0, h - 20.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.1}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 16 {:.1})">best val_bpb</text>"#, top + ph / 2.0, top + ph / 2.0);
    for (cond, curve) in curves {
        let pts: Vec<String> = curve
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
                color(*cond),
                pts.join(" "),
                curve.run_id
            );
        }
    }
    let present: BTreeSet<Condition> = curves.iter().map(|(c, _)| *c).collect();
    for (k, c) in present.iter().enumerate() {
        let ly = top + 12.0 + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{:.1}" y="{:.1}" width="12" height="3" fill="{}"/>"#, left + pw - 110.0, ly - 4.0, color(*c));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" font-size="11" font-family="sans-serif">{c}</text>"#, left + pw - 92.0);
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_p(p: Option<f64>) -> String {
    p.map_or("n/a".to_string(), |p| format!("{p:.3e}"))
}

/// Renders every file of the bundle in memory.
pub fn render_report(input: &ReportInput, opts: &ReportOptions) -> ReportFiles {
    let mut out = ReportFiles::default();
    let mut md = String::from("# Search analysis report\n\n");

    // Runs.
    let groups = by_track_condition(&input.runs);
    let _ = writeln!(md, "## Runs\n");
    if input.runs.is_empty() {
        md.push_str("No runs supplied.\n\n");
    } else {
        md.push_str("| track | condition | runs | mean AUC-OC | mean best val_bpb |\n|---|---|---|---|---|\n");
        for (track, by) in &groups {
            for (c, rs) in by {
                let auc: Vec<f64> = rs.iter().map(|r| r.auc_oc).collect();
                let best: Vec<f64> = rs.iter().map(|r| r.best_bpb).collect();
                let _ = writeln!(md, "| {track} | {c} | {} | {:.2} | {:.4} |", rs.len(), mean(&auc), mean(&best));
            }
        }
        md.push('\n');
    }
    out.files.insert(
        "tables/per_run.csv".into(),
        if input.runs.is_empty() {
            table(&["track", "condition", "run", "auc_oc", "best_bpb"], [])
        } else {
            csv_string(|buf| write_run_table(&input.runs, buf).map_err(|e| e.to_string()))
        },
    );

    // Decomposition.
    let mut decomps = Vec::new();
    md.push_str("## Improvement decomposition\n\n");
    for (track, res) in decompose_all(&input.runs) {
        match res {
            Ok(d) => decomps.push(d),
            Err(e) => out.warnings.push(format!("decomposition {track}: {e}")),
        }
    }
    if decomps.is_empty() {
        md.push_str("Insufficient conditions for a decomposition.\n\n");
    } else {
        md.push_str("| track | total improvement (bpb) | HP share | architecture share |\n|---|---|---|---|\n");
        for d in &decomps {
            let _ = writeln!(md, "| {} | {:.4} | {:.0}% | {:.0}% |", d.track, d.total_improvement, d.hp_pct, d.arch_pct);
        }
        md.push('\n');
    }
    out.files.insert(
        "tables/decomposition.csv".into(),
        csv_string(|buf| write_decomposition_csv(&decomps, buf).map_err(|e| e.to_string())),
    );

    // Statistics.
    let (reports, comparisons) = run_stats(input, opts, &mut out.warnings);
    let adj = |slot: Option<usize>| slot.and_then(|i| reports[i].adjusted_p);
    let raw = |slot: Option<usize>| slot.map(|i| reports[i].raw_p);
    out.files.insert(
        "tables/auc_comparison.csv".into(),
        table(
            &[
                "track", "condition_a", "condition_b", "n_a", "n_b", "mean_auc_a", "mean_auc_b", "cohens_d", "welch_p",
                "welch_p_adj", "mann_whitney_p", "mann_whitney_p_adj",
            ],
            comparisons.iter().map(|c| {
                let m = |xs: &[f64]| if xs.is_empty() { String::new() } else { mean(xs).to_string() };
                vec![
                    c.track.clone(),
                    c.a.to_string(),
                    c.b.to_string(),
                    c.auc_a.len().to_string(),
                    c.auc_b.len().to_string(),
                    m(&c.auc_a),
                    m(&c.auc_b),
                    opt(c.d),
                    opt(raw(c.welch)),
                    opt(adj(c.welch)),
                    opt(raw(c.mwu)),
                    opt(adj(c.mwu)),
                ]
            }),
        ),
    );
    md.push_str("## AUC-OC comparisons\n\n");
    if comparisons.is_empty() {
        md.push_str("No comparable conditions.\n\n");
    } else {
        md.push_str("| comparison | n | Cohen's d | Welch p (adj.) | Mann-Whitney p (adj.) |\n|---|---|---|---|---|\n");
        for c in &comparisons {
            let n = format!("{}/{}", c.auc_a.len(), c.auc_b.len());
            let d = c.d.map_or("insufficient-n".to_string(), |d| format!("{d:.2}"));
            let _ = writeln!(
                md,
                "| {} | {n} | {d} | {} ({}) | {} ({}) |",
                label(&c.track, c.a, c.b),
                fmt_p(raw(c.welch)),
                fmt_p(adj(c.welch)),
                fmt_p(raw(c.mwu)),
                fmt_p(adj(c.mwu))
            );
        }
        md.push('\n');
    }
    out.files.insert(
        "tables/stats.csv".into(),
        csv_string(|buf| write_stats_csv(&reports, buf).map_err(|e| e.to_string())),
    );
    if let Some(r) = reports.iter().find(|r| r.test == "permutation_cluster") {
        let _ = writeln!(md, "## Clustering\n\nCross/within distance ratio {:.3}, permutation p = {:.4}.\n", r.statistic, r.raw_p);
    }

    // Keep rates and techniques, per log.
    out.files.insert(
        "tables/keep_rates.csv".into(),
        table(
            &["run", "track", "condition", "kept", "eligible", "rate"],
            input.logs.iter().map(|l| {
                let k = crate::metrics::keep_rate(l);
                vec![
                    l.header.run_id.clone(),
                    l.header.track.to_string(),
                    l.header.condition.to_string(),
                    k.kept.to_string(),
                    k.eligible.to_string(),
                    k.rate.to_string(),
                ]
            }),
        ),
    );
    let registry = TechniqueRegistry::standard();
    let mut tech_rows = Vec::new();
    for l in input.logs.iter().filter(|l| l.header.condition == Condition::Agent) {
        for m in registry.classify(l) {
            let idx: Vec<String> = m.triggered_by.iter().map(usize::to_string).collect();
            tech_rows.push(vec![l.header.run_id.clone(), l.header.track.to_string(), m.technique, m.matched.to_string(), idx.join(";")]);
        }
    }
    if !tech_rows.is_empty() {
        md.push_str("## Techniques\n\n| run | technique | matched |\n|---|---|---|\n");
        for r in &tech_rows {
            let _ = writeln!(md, "| {} | {} | {} |", r[0], r[2], r[3]);
        }
        md.push('\n');
    }
    out.files.insert("tables/techniques.csv".into(), table(&["run", "track", "technique", "matched", "triggered_by"], tech_rows));

    // Gower distances between agent best architectures.
    let features: Vec<FeatureVector> = input
        .logs
        .iter()
        .filter(|l| l.header.condition == Condition::Agent)
        .filter_map(|l| extract_features(l).ok())
        .collect();
    let matrix = gower_matrix(&features).unwrap_or_default();
    let mut header = vec!["run".to_string(), "track".to_string()];
    header.extend(features.iter().map(|f| f.label.clone()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.files.insert(
        "tables/gower_matrix.csv".into(),
        table(
            &header,
            matrix.iter().zip(&features).map(|(row, f)| {
                let mut r = vec![f.label.clone(), f.track.clone()];
                r.extend(row.iter().map(f64::to_string));
                r
            }),
        ),
    );

    // Transfer.
    out.files.insert(
        "tables/transfer.csv".into(),
        table(
            &["source_track", "target_track", "native_bpb", "transfer_bpb", "rel_change_pct", "crashed"],
            input.transfer.iter().map(|c| {
                vec![
                    c.source_track.clone(),
                    c.target_track.clone(),
                    opt(c.native_bpb),
                    opt(c.transfer_bpb),
                    opt(c.rel_change_pct),
                    c.crashed.to_string(),
                ]
            }),
        ),
    );
    if !input.transfer.is_empty() {
        let targets: BTreeSet<&str> = input.transfer.iter().map(|c| c.target_track.as_str()).collect();
        let sources: BTreeSet<&str> = input.transfer.iter().map(|c| c.source_track.as_str()).collect();
        md.push_str("## Transfer (relative change in val_bpb, %, negative = better)\n\n| source \\ target |");
        for t in &targets {
            let _ = write!(md, " {t} |");
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(targets.len()));
        md.push('\n');
        for s in &sources {
            let _ = write!(md, "| {s} |");
            for t in &targets {
                let cell = input.transfer.iter().find(|c| c.source_track == *s && c.target_track == *t);
                let v = cell.and_then(|c| c.rel_change_pct).map_or("crashed".to_string(), |v| format!("{v:+.1}"));
                let _ = write!(md, " {v} |");
            }
            md.push('\n');
        }
        md.push('\n');
    }

    // Freezing.
    out.files.insert(
        "tables/freeze.csv".into(),
        table(
            &["curve", "level", "val_bpb", "degradation_pct", "frozen_intact"],
            input.freeze.iter().flat_map(|(name, pts)| {
                pts.iter().map(move |p| {
                    vec![name.clone(), p.level.to_string(), opt(p.val_bpb), opt(p.degradation_pct), p.frozen_intact.to_string()]
                })
            }),
        ),
    );
    if !input.freeze.is_empty() {
        md.push_str("## Layer freezing\n\n| curve | frozen blocks | degradation |\n|---|---|---|\n");
        for (name, pts) in &input.freeze {
            for p in pts {
                let d = p.degradation_pct.map_or("crashed".to_string(), |d| format!("{d:+.2}%"));
                let _ = writeln!(md, "| {name} | {} | {d} |", p.level);
            }
        }
        md.push('\n');
    }

    // Length matching.
    out.files.insert(
        "tables/length_match.csv".into(),
        table(
            &["truncated_len", "full_bpb", "truncated_bpb", "rel_change_pct", "full_val_bytes", "truncated_val_bytes"],
            input.length_match.iter().map(|m| {
                vec![
                    m.truncated_len.to_string(),
                    m.full_bpb.to_string(),
                    m.truncated_bpb.to_string(),
                    m.rel_change_pct.to_string(),
                    m.full_val_bytes.to_string(),
                    m.truncated_val_bytes.to_string(),
                ]
            }),
        ),
    );
    if !input.length_match.is_empty() {
        md.push_str("## Length matching\n\n| truncated length | change vs. full length |\n|---|---|\n");
        for m in &input.length_match {
            let _ = writeln!(md, "| {} | {:+.2}% |", m.truncated_len, m.rel_change_pct);
        }
        md.push('\n');
    }

    // Innovations.
    out.files.insert(
        "tables/innovations.csv".into(),
        table(
            &["origin_run", "origin_track", "edits", "classification", "degradation_pct", "inapplicable"],
            input.innovations.iter().map(|i| {
                let edits: Vec<String> =
                    i.source.mutation.edits.iter().map(|e| format!("{}:{}->{}", e.field, e.old_value, e.new_value)).collect();
                let degr: Vec<String> = i.degradation_pct.iter().map(|(t, d)| format!("{t}={d}")).collect();
                let class = match i.classification {
                    Some(Classification::Universal) => "universal",
                    Some(Classification::Specific) => "specific",
                    None => "excluded",
                };
                vec![
                    i.source.origin_run.clone(),
                    i.source.origin_track.clone(),
                    edits.join(";"),
                    class.to_string(),
                    degr.join(";"),
                    i.inapplicable.clone().unwrap_or_default(),
                ]
            }),
        ),
    );
    if !input.innovations.is_empty() {
        let s = summarize_innovations(&input.innovations);
        let _ = writeln!(
            md,
            "## Innovations\n\n{} of {} classified innovations are universal ({} excluded); binomial p = {:.3e} against a {:.0}% universal rate.\n",
            s.universal,
            s.classified,
            s.excluded,
            s.binomial_p,
            super::PREDICTED_UNIVERSAL_RATE * 100.0
        );
    }

    // Figures.
    let mut per_track: BTreeMap<String, Vec<(Condition, BestSoFarCurve)>> = BTreeMap::new();
    for l in &input.logs {
        per_track
            .entry(l.header.track.to_string())
            .or_default()
            .push((l.header.condition, crate::metrics::best_so_far(l)));
    }
    for (track, curves) in &per_track {
        let refs: Vec<(Condition, &BestSoFarCurve)> = curves.iter().map(|(c, v)| (*c, v)).collect();
        out.files.insert(format!("figures/best_so_far_{track}.svg"), curves_svg(&format!("{track}: best-so-far val_bpb"), &refs));
    }

    if !out.warnings.is_empty() {
        md.push_str("## Warnings\n\n");
        for w in &out.warnings {
            let _ = writeln!(md, "- {w}");
        }
        md.push('\n');
    }
    out.files.insert("report.md".into(), md);
    out
}

/// Renders and writes the bundle under `dir`.
pub fn generate_report(input: &ReportInput, opts: &ReportOptions, dir: &Path) -> io::Result<ReportFiles> {
    let files = render_report(input, opts);
    std::fs::create_dir_all(dir.join("tables"))?;
    std::fs::create_dir_all(dir.join("figures"))?;
    for (rel, contents) in &files.files {
        std::fs::write(dir.join(rel), contents)?;
    }
    Ok(files)
}
