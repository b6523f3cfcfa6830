//! Prints generator statistics and a quick model grid for a synthetic config.
//!
//! `cargo run --example calibrate -- '{"cell_size": 5}' 3 logreg,random_forest,tagcn:3`

use std::time::Instant;

use dormant_core::experiment::{run_experiment, Benchmark, ExperimentConfig};
use dormant_core::features::{assign_decile_groups, DatasetIndex};
use dormant_core::ingest::PruneConfig;
use dormant_core::models::ModelSpec;
use dormant_core::synthgen::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let synth: SynthConfig = serde_json::from_str(args.get(1).map_or("{}", |s| s.as_str()))?;
    let repeats: usize = args.get(2).map_or(Ok(2), |s| s.parse())?;
    let models = ModelSpec::parse_list(args.get(3).map_or("logreg,random_forest,gbt,tagcn:3", |s| s.as_str()))?;

    let t = Instant::now();
    let forum = generate(&synth)?;
    let raw = forum.dataset()?;
    let raw_index = DatasetIndex::new(&raw);
    let raw_groups = assign_decile_groups(raw_index.activity())?;
    let mut per_decile = [0usize; 10];
    for (i, a) in raw_index.accounts().iter().enumerate() {
        if raw.labels().is_spammer(a) {
            per_decile[raw_groups[i] as usize - 1] += 1;
        }
    }
    let total: usize = per_decile.iter().sum();
    println!(
        "raw: {} articles, {} accounts, {} spammers, per decile {:?}, bottom-two share {:.3}",
        raw.articles().len(),
        raw_index.len(),
        total,
        per_decile,
        (per_decile[0] + per_decile[1]) as f64 / total.max(1) as f64
    );

    {
        let mask: Vec<bool> = raw_index.accounts().iter().map(|a| raw.labels().is_spammer(a)).collect();
        let sv = raw_index.suspect_values(&mask, true);
        let mut sums = [0f64; 5];
        let mut counts = [0usize; 5];
        for (i, &g) in raw_groups.iter().enumerate() {
            sums[(g as usize - 1) / 2] += sv[i].value;
            counts[(g as usize - 1) / 2] += 1;
        }
        let means: Vec<String> = sums.iter().zip(&counts).map(|(s, &c)| format!("{:.3}", s / c as f64)).collect();
        println!("  raw bucket mean s: {}", means.join(" "));
    }
    let pruned = forum.prune(&PruneConfig::small_benchmark())?;
    {
        let mut camp = (0usize, 0f64, 0f64);
        let mut bg = (0usize, 0f64, 0f64);
        for a in pruned.articles() {
            let t = if a.article.board == "HatePolitics" { &mut camp } else { &mut bg };
            t.0 += 1;
            t.1 += a.raw.comments as f64;
            t.2 += a.raw.net_sentiment() as f64;
        }
        println!(
            "  campaign {} pop {:.1} sent {:.1} | background {} pop {:.1} sent {:.1}",
            camp.0,
            camp.1 / camp.0.max(1) as f64,
            camp.2 / camp.0.max(1) as f64,
            bg.0,
            bg.1 / bg.0.max(1) as f64,
            bg.2 / bg.0.max(1) as f64
        );
    }
    let bench = Benchmark::new(pruned)?;
    let summary = bench.summary();
    println!(
        "pruned: {} articles, {} accounts, {} spammers, {} edges ({:.1?})",
        summary.articles,
        summary.accounts,
        summary.spammers,
        summary.edges,
        t.elapsed()
    );
    let mut hist = [0usize; 6];
    for &v in &bench.activeness.values {
        hist[(v as usize).min(6) - 1] += 1;
    }
    let shares: Vec<String> = hist.iter().map(|&h| format!("{:.3}", h as f64 / bench.len() as f64)).collect();
    println!("  activity share 1..5,6+: {}", shares.join(" "));
    let mask = bench.labels.clone();
    let sv = bench.index.suspect_values(&mask, true);
    for g in &summary.groups {
        let members: Vec<usize> = (0..bench.len()).filter(|&i| bench.groups()[i] == g.group).collect();
        let mean = |want: bool| {
            let v: Vec<f64> = members.iter().filter(|&&i| mask[i] == want).map(|&i| sv[i].value).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        let full = members.iter().filter(|&&i| !mask[i] && sv[i].value >= 0.999).count();
        println!(
            "  G{:<2} lb {:>5?} normals {:>5} (s=1: {:>4}) spammers {:>3}  s(normal) {:.3} s(spam) {:.3}",
            g.group,
            g.lower_bound,
            g.normals,
            full,
            g.spammers,
            mean(false),
            mean(true)
        );
    }

    let config = ExperimentConfig {
        repeats,
        models,
        synth,
        ..ExperimentConfig::default()
    };
    let t = Instant::now();
    let report = run_experiment(&bench, &config)?;
    println!("experiment: {:.1?}", t.elapsed());
    report.write_auprc_table(std::io::stdout())?;
    report.write_f1_table(std::io::stdout())?;
    pattern(&report);
    for row in &report.rows {
        if !row.best_epochs.is_empty() {
            println!("{} social={} best epochs {:?}", row.model, row.social, row.best_epochs);
        }
    }
    Ok(())
}

fn pattern(report: &dormant_core::experiment::EvaluationReport) {
    use dormant_core::eval::Slice;
    let mean = |c: Option<&dormant_core::eval::Cell>| c.and_then(|c| c.mean).unwrap_or(f64::NAN);
    let non_gnn: Vec<_> = report.rows.iter().filter(|r| !r.model.kind.is_gnn()).collect();
    let Some(best) = non_gnn
        .iter()
        .filter(|r| !r.social)
        .max_by(|a, b| mean(a.auprc(Slice::All)).total_cmp(&mean(b.auprc(Slice::All))))
    else {
        return;
    };
    let g1 = Slice::Groups(1, 1);
    let g2 = Slice::Groups(2, 2);
    let q5 = Slice::Groups(9, 10);
    let a = mean(best.auprc(q5)) - mean(best.auprc(g1));
    let b = report
        .row(best.model, true)
        .map_or(f64::NAN, |r| mean(r.auprc(g1)) - mean(best.auprc(g1)));
    let best_on = |slice: Slice| {
        non_gnn
            .iter()
            .filter(|r| r.social)
            .map(|r| mean(r.auprc(slice)))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let f1 = |r: &dormant_core::experiment::ReportRow| r.top_k(200).and_then(|c| c.f1.mean).unwrap_or(f64::NAN);
    let best_f1 = non_gnn.iter().filter(|r| r.social).map(|r| f1(r)).fold(f64::NEG_INFINITY, f64::max);
    println!("best baseline {}: (a) {a:+.4} (b) {b:+.4}", best.model);
    let tag = dormant_core::models::ModelSpec::tagcn(3);
    if let Some(t) = report.row(tag, true) {
        println!(
            "(c) {:+.4} (d) tagcn {:.4} vs {:.4}",
            mean(t.auprc(g2)) - best_on(g2),
            f1(t),
            best_f1
        );
    }
}
