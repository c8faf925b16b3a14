//! Age-binned aggregation of per-case metrics and table rendering.
//!
//! By default results are macro-averaged: each case contributes the mean of
//! its defined per-class values, and each bin the mean of its case means.
//! Micro averaging instead pools every defined (case, class) value in a bin.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{AgeBin, Manifest};
use crate::error::{Error, Result};
use crate::labelmap::ClassMapping;
use crate::metrics::MetricResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BinStats {
    pub mean_dsc: Option<f64>,
    pub mean_nsd: Option<f64>,
    /// Distinct cases evaluated in the bin.
    pub n_cases: usize,
    /// Cases whose every class was undefined.
    pub n_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    /// Indexed like [`AgeBin::ALL`].
    pub bins: [BinStats; 6],
}

impl AggregateRow {
    pub fn bin(&self, bin: AgeBin) -> &BinStats {
        &self.bins[bin.index()]
    }

    /// Mean over paediatric case means (all bins below 17 pooled).
    pub fn pooled(&self, bins: &[AgeBin]) -> Option<(f64, f64)> {
        let mut dsc = 0.0;
        let mut nsd = 0.0;
        let mut n = 0usize;
        for &b in bins {
            let s = self.bin(b);
            let k = s.n_cases - s.n_undefined;
            if let (Some(d), Some(m)) = (s.mean_dsc, s.mean_nsd) {
                dsc += d * k as f64;
                nsd += m * k as f64;
                n += k;
            }
        }
        (n > 0).then(|| (dsc / n as f64, nsd / n as f64))
    }
}

/// Mean of defined per-class values for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSummary {
    pub case_id: String,
    pub age_years: f64,
    pub bin: AgeBin,
    pub mean_dsc: Option<f64>,
    pub mean_nsd: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn group_by_case(results: &[MetricResult]) -> BTreeMap<&str, Vec<&MetricResult>> {
    let mut by_case: BTreeMap<&str, Vec<&MetricResult>> = BTreeMap::new();
    for r in results {
        by_case.entry(r.case_id.as_str()).or_default().push(r);
    }
    // Class order makes the floating-point sums independent of input order.
    for v in by_case.values_mut() {
        v.sort_by_key(|r| r.class_id);
    }
    by_case
}

/// One summary per distinct case, sorted by age then case id.
pub fn summarize_cases(results: &[MetricResult], manifest: &Manifest) -> Result<Vec<CaseSummary>> {
    let index = manifest.index();
    let mut out = group_by_case(results)
        .into_iter()
        .map(|(id, rs)| {
            let record = index
                .get(id)
                .ok_or_else(|| Error::Manifest(format!("case {id} is not in the manifest")))?;
            Ok(CaseSummary {
                case_id: id.to_string(),
                age_years: record.age_years,
                bin: record.age_bin()?,
                mean_dsc: mean(rs.iter().filter_map(|r| r.dsc)),
                mean_nsd: mean(rs.iter().filter_map(|r| r.nsd)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| {
        a.age_years
            .partial_cmp(&b.age_years)
            .unwrap()
            .then_with(|| a.case_id.cmp(&b.case_id))
    });
    Ok(out)
}

pub fn aggregate(
    results: &[MetricResult],
    manifest: &Manifest,
    method: &str,
    averaging: Averaging,
) -> Result<AggregateRow> {
    let cases = summarize_cases(results, manifest)?;
    let mut bins = [BinStats::default(); 6];
    for bin in AgeBin::ALL {
        let in_bin: Vec<&CaseSummary> = cases.iter().filter(|c| c.bin == bin).collect();
        let stats = &mut bins[bin.index()];
        stats.n_cases = in_bin.len();
        stats.n_undefined = in_bin.iter().filter(|c| c.mean_dsc.is_none()).count();
        // Case order (age, id) is fixed, so sums are reproducible.
        match averaging {
            Averaging::Macro => {
                stats.mean_dsc = mean(in_bin.iter().filter_map(|c| c.mean_dsc));
                stats.mean_nsd = mean(in_bin.iter().filter_map(|c| c.mean_nsd));
            }
            Averaging::Micro => {
                let by_case = group_by_case(results);
                let pooled = |f: fn(&MetricResult) -> Option<f64>| {
                    mean(
                        in_bin
                            .iter()
                            .flat_map(|c| by_case[c.case_id.as_str()].iter().filter_map(|r| f(r))),
                    )
                };
                stats.mean_dsc = pooled(|r| r.dsc);
                stats.mean_nsd = pooled(|r| r.nsd);
            }
        }
    }
    Ok(AggregateRow {
        method: method.to_string(),
        bins,
    })
}

/// Percentage with one decimal, rounding halves up.
pub fn format_percent(value: f64) -> String {
    let tenths = (value * 1000.0 + 0.5 + 1e-9).floor();
    format!("{:.1}", tenths / 10.0)
}

fn cell(stats: &BinStats) -> (String, String) {
    match (stats.mean_dsc, stats.mean_nsd) {
        (Some(d), Some(n)) => (format_percent(d), format_percent(n)),
        _ => ("--".to_string(), "--".to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::Parameter(format!("unknown table format '{other}'"))),
        }
    }
}

/// Methods as rows, age bins as columns, cells `DSC/NSD` in percent.
pub fn render(rows: &[AggregateRow], format: TableFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Parameter("nothing to render".into()));
    }
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            out.push_str("| Method |");
            for b in AgeBin::ALL {
                write!(out, " {} |", b.label()).unwrap();
            }
            out.push_str("\n|---|");
            for _ in AgeBin::ALL {
                out.push_str("---|");
            }
            out.push('\n');
            for row in rows {
                write!(out, "| {} |", row.method).unwrap();
                for s in &row.bins {
                    let (d, n) = cell(s);
                    write!(out, " {d}/{n} |").unwrap();
                }
                out.push('\n');
            }
            out.push_str("\nDSC/NSD (%) per age bin; --/-- marks bins without evaluated cases.\n");
        }
        TableFormat::Csv => {
            out.push_str("method,bin,dsc_pct,nsd_pct,n_cases,n_undefined\n");
            for row in rows {
                for b in AgeBin::ALL {
                    let s = row.bin(b);
                    let (d, n) = cell(s);
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        row.method,
                        b.label(),
                        d,
                        n,
                        s.n_cases,
                        s.n_undefined
                    )
                    .unwrap();
                }
            }
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const PER_AGE_HEADER: &str = "case_id,age_years,bin,mean_dsc,mean_nsd,method";

/// One row per evaluated case, sorted by age.
pub fn export_per_age(
    results: &[MetricResult],
    manifest: &Manifest,
    method: &str,
) -> Result<String> {
    let mut out = String::from(PER_AGE_HEADER);
    out.push('\n');
    out.push_str(&per_age_rows(results, manifest, method)?);
    Ok(out)
}

/// Body rows of [`export_per_age`], for concatenating several methods.
pub fn per_age_rows(results: &[MetricResult], manifest: &Manifest, method: &str) -> Result<String> {
    let mut out = String::new();
    for c in summarize_cases(results, manifest)? {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.case_id,
            c.age_years,
            c.bin.label(),
            opt(c.mean_dsc),
            opt(c.mean_nsd),
            method
        )
        .unwrap();
    }
    Ok(out)
}

pub const METRICS_HEADER: &str =
    "case_id,class_id,class_name,dsc,nsd,gt_voxels,pred_voxels,defined";

/// Per-class metrics CSV.
pub fn metrics_csv(results: &[MetricResult], classes: &ClassMapping) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.case_id,
            r.class_id,
            classes.class_name(r.class_id),
            opt(r.dsc),
            opt(r.nsd),
            r.gt_voxels,
            r.pred_voxels,
            r.is_defined() as u8
        )
        .unwrap();
    }
    out
}

fn parse_opt(field: &str, line: usize) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Format(format!("metrics line {line}: bad value '{field}'")))
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricResult>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(Error::Format("metrics CSV header mismatch".into())),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Format(format!(
                    "metrics line {}: expected 8 fields",
                    i + 1
                )));
            }
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Format(format!("metrics line {}: bad count '{s}'", i + 1)))
            };
            Ok(MetricResult {
                case_id: f[0].to_string(),
                class_id: int(f[1])? as u16,
                dsc: parse_opt(f[3], i + 1)?,
                nsd: parse_opt(f[4], i + 1)?,
                gt_voxels: int(f[5])?,
                pred_voxels: int(f[6])?,
            })
        })
        .collect()
}

pub fn load_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricResult>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{domain_for_age, CaseRecord};

    fn manifest(ages: &[(&str, f64)]) -> Manifest {
        Manifest::new(
            ages.iter()
                .map(|&(id, age)| CaseRecord {
                    case_id: id.into(),
                    age_years: age,
                    domain: domain_for_age(age),
                    image: "i".into(),
                    label: "l".into(),
                    split: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn result(case: &str, class: u16, dsc: Option<f64>, nsd: Option<f64>) -> MetricResult {
        MetricResult {
            case_id: case.into(),
            class_id: class,
            dsc,
            nsd,
            gt_voxels: 1,
            pred_voxels: 1,
        }
    }

    #[test]
    fn singleton_and_pair_means() {
        let m = manifest(&[("a", 2.0), ("b", 3.5), ("c", 40.0)]);
        let row = aggregate(
            &[result("a", 1, Some(0.5), Some(0.5))],
            &m,
            "x",
            Averaging::Macro,
        )
        .unwrap();
        assert_eq!(row.bin(AgeBin::Y0To3).mean_dsc, Some(0.5));
        assert_eq!(row.bin(AgeBin::Adult).mean_dsc, None);

        let rs = vec![
            result("a", 1, Some(0.9), Some(1.0)),
            result("a", 2, Some(0.7), Some(1.0)),
            result("b", 1, Some(0.6), Some(1.0)),
        ];
        let row = aggregate(&rs, &m, "x", Averaging::Macro).unwrap();
        assert!((row.bin(AgeBin::Y0To3).mean_dsc.unwrap() - 0.7).abs() < 1e-12);
        let micro = aggregate(&rs, &m, "x", Averaging::Micro).unwrap();
        assert!((micro.bin(AgeBin::Y0To3).mean_dsc.unwrap() - 2.2 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn undefined_cases_are_counted() {
        let m = manifest(&[("a", 2.0), ("b", 3.0)]);
        let rs = vec![
            result("a", 1, None, None),
            result("b", 1, Some(0.4), Some(0.2)),
        ];
        let row = aggregate(&rs, &m, "x", Averaging::Macro).unwrap();
        let s = row.bin(AgeBin::Y0To3);
        assert_eq!((s.n_cases, s.n_undefined), (2, 1));
        assert_eq!(s.mean_dsc, Some(0.4));
    }

    #[test]
    fn unknown_case_is_manifest_error() {
        let m = manifest(&[("a", 2.0)]);
        assert!(matches!(
            aggregate(
                &[result("zz", 1, Some(1.0), Some(1.0))],
                &m,
                "x",
                Averaging::Macro
            ),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(format_percent(0.8347), "83.5");
        assert_eq!(format_percent(0.8345), "83.5");
        assert_eq!(format_percent(0.8344), "83.4");
        assert_eq!(format_percent(1.0), "100.0");
        assert_eq!(format_percent(0.0), "0.0");
    }

    #[test]
    fn render_layout() {
        let m = manifest(&[
            ("a", 2.0),
            ("b", 5.0),
            ("c", 8.0),
            ("d", 11.0),
            ("e", 14.0),
            ("f", 20.0),
        ]);
        let rs: Vec<_> = ["a", "b", "c", "d", "e", "f"]
            .iter()
            .map(|c| result(c, 1, Some(0.8347), Some(0.9)))
            .collect();
        let row = aggregate(&rs, &m, "CL(p=0.25)", Averaging::Macro).unwrap();
        let md = render(std::slice::from_ref(&row), TableFormat::Markdown).unwrap();
        assert_eq!(md.matches("83.5/90.0").count(), 6);
        assert!(md.starts_with("| Method | 0-3 | 4-6 | 7-9 | 10-12 | 13-16 | 17+ |"));
        let csv = render(&[row], TableFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 7);
        assert_eq!(csv.matches("83.5,90.0").count(), 6);

        let empty = AggregateRow {
            method: "DA".into(),
            bins: [BinStats::default(); 6],
        };
        assert!(render(&[empty], TableFormat::Markdown)
            .unwrap()
            .contains("--/--"));
        assert!(render(&[], TableFormat::Csv).is_err());
    }

    #[test]
    fn per_age_sorted() {
        let m = manifest(&[("old", 50.0), ("kid", 1.5), ("teen", 15.25)]);
        let rs = vec![
            result("old", 1, Some(0.9), Some(0.9)),
            result("kid", 1, Some(0.5), Some(0.6)),
            result("teen", 1, Some(0.7), Some(0.8)),
        ];
        let csv = export_per_age(&rs, &m, "m").unwrap();
        let ids: Vec<&str> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(ids, ["kid", "teen", "old"]);
        assert!(csv.contains("teen,15.25,13-16,0.7,0.8,m"));
    }

    #[test]
    fn metrics_csv_round_trip() {
        let rs = vec![
            result("a", 1, Some(0.1 + 0.2), Some(1.0 / 3.0)),
            result("a", 2, None, None),
        ];
        let text = metrics_csv(&rs, &ClassMapping::default_taxonomy());
        assert!(text.lines().nth(1).unwrap().starts_with("a,1,spleen,"));
        assert_eq!(parse_metrics_csv(&text).unwrap(), rs);
    }
}
