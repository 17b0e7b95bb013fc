use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use loadshift::billing::HalfCents;
use loadshift::oracle::SolverQuality;
use loadshift::scenario::{CellQuantum, Profile, HOURS};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_schedule(path: &Path, assignments: &BTreeMap<String, usize>, quality: Option<SolverQuality>) -> Result<()> {
    let mut w = writer(path)?;
    match quality {
        Some(q) => {
            w.write_record(["appliance", "start_hour", "quality"])?;
            for (name, start) in assignments {
                w.write_record([name.as_str(), &start.to_string(), &q.to_string()])?;
            }
        }
        None => {
            w.write_record(["appliance", "start_hour"])?;
            for (name, start) in assignments {
                w.write_record([name.as_str(), &start.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_profile(path: &Path, before: &Profile, after: &Profile) -> Result<()> {
    let q = CellQuantum::STANDARD;
    let mut w = writer(path)?;
    w.write_record(["hour", "load_kw_before", "load_kw_after"])?;
    for h in 0..HOURS {
        w.write_record([h.to_string(), format!("{:.1}", q.kw(before[h])), format!("{:.1}", q.kw(after[h]))])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Left-aligned first column, right-aligned numbers.
pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// Thirty-day bill in dollars, two decimals.
pub fn monthly_usd(daily: HalfCents) -> String {
    loadshift::billing::format_dollars(HalfCents(daily.0 * loadshift::billing::DAYS_PER_MONTH))
}

pub fn kw(cells: u32) -> String {
    format!("{:.1}", CellQuantum::STANDARD.kw(cells))
}
