//! The `rank` output: one suspect per line, most suspicious first.

use std::io::{BufRead, Write};

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub rank: usize,
    pub account: String,
    pub score: f64,
    pub suspect_value: f64,
    pub group: u8,
}

const HEADER: &str = "rank\taccount\tscore\tsuspect_value\tgroup";

/// Sorts by descending score, ties by account id, and numbers the rows from 1.
pub fn rank_rows(mut rows: Vec<RankRow>) -> Vec<RankRow> {
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.account.cmp(&b.account)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    rows
}

pub fn write_ranking<W: Write>(mut w: W, rows: &[RankRow]) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{:?}\t{:?}\tG{}", r.rank, r.account, r.score, r.suspect_value, r.group)?;
    }
    Ok(())
}

pub fn read_ranking<R: BufRead>(r: R) -> Result<Vec<RankRow>> {
    let mut lines = r.lines();
    if lines.next().transpose()?.as_deref() != Some(HEADER) {
        bail!("missing ranking header");
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let ctx = || format!("ranking line {}", i + 2);
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            bail!("{}: expected 5 columns", ctx());
        }
        rows.push(RankRow {
            rank: cols[0].parse().with_context(ctx)?,
            account: cols[1].to_string(),
            score: cols[2].parse().with_context(ctx)?,
            suspect_value: cols[3].parse().with_context(ctx)?,
            group: cols[4]
                .strip_prefix('G')
                .and_then(|g| g.parse().ok())
                .with_context(ctx)?,
        });
    }
    Ok(rows)
}
