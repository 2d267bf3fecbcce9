use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::MetricsRecord;

pub const HEADER: &str = "run_id,variant,lambda_w,lambda_g,lambda_c,factor,corruption,psnr,ssim,ms_ssim_2,lr_consistency_l1,density_score,norm_stat,seed";

/// One metrics row. Text fields must not contain commas.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRecord {
    pub run_id: String,
    pub variant: String,
    pub lambda_w: f64,
    pub lambda_g: f64,
    pub lambda_c: f64,
    pub factor: usize,
    pub corruption: String,
    pub metrics: MetricsRecord,
    pub seed: u64,
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_csv(records: &[CsvRecord], out: &mut impl Write) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for r in records {
        for field in [&r.run_id, &r.variant, &r.corruption] {
            if field.contains([',', '\n', '\r']) {
                return Err(Error::invalid(format!(
                    "csv field `{field}` contains a separator"
                )));
            }
        }
        let m = &r.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.run_id,
            r.variant,
            f6(r.lambda_w),
            f6(r.lambda_g),
            f6(r.lambda_c),
            r.factor,
            r.corruption,
            f6(m.psnr),
            f6(m.ssim),
            m.ms_ssim.map(f6).unwrap_or_default(),
            f6(m.lr_consistency_l1),
            f6(m.density_score),
            f6(m.norm_stat),
            r.seed
        )?;
    }
    Ok(())
}

pub fn emit_csv(records: &[CsvRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut buf = Vec::new();
    write_csv(records, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Parse text written by [`write_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<CsvRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::invalid("csv header does not match the schema"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 14 {
                return Err(Error::invalid(format!(
                    "csv row {} has {} fields",
                    i + 1,
                    f.len()
                )));
            }
            let num = |j: usize| -> Result<f64> {
                f[j].parse()
                    .map_err(|_| Error::invalid(format!("csv row {} field {j}: `{}`", i + 1, f[j])))
            };
            Ok(CsvRecord {
                run_id: f[0].into(),
                variant: f[1].into(),
                lambda_w: num(2)?,
                lambda_g: num(3)?,
                lambda_c: num(4)?,
                factor: num(5)? as usize,
                corruption: f[6].into(),
                metrics: MetricsRecord {
                    psnr: num(7)?,
                    ssim: num(8)?,
                    ms_ssim: if f[9].is_empty() { None } else { Some(num(9)?) },
                    lr_consistency_l1: num(10)?,
                    density_score: num(11)?,
                    norm_stat: num(12)?,
                },
                seed: f[13]
                    .parse()
                    .map_err(|_| Error::invalid(format!("csv row {} seed", i + 1)))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> CsvRecord {
        CsvRecord {
            run_id: "sr-003".into(),
            variant: "rls_plus".into(),
            lambda_w: 2e-4,
            lambda_g: 4e-4,
            lambda_c: 0.05,
            factor: 8,
            corruption: "gauss:0.1".into(),
            metrics: MetricsRecord {
                psnr: 23.4567891,
                ssim: 0.8123456,
                ms_ssim: Some(0.9),
                lr_consistency_l1: 0.00312345,
                density_score: -21.5,
                norm_stat: 15.9876543,
            },
            seed: 42,
        }
    }

    #[test]
    fn empty_is_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{HEADER}\n"));
    }

    #[test]
    fn round_trips_at_six_decimals() {
        let mut r = record();
        let mut buf = Vec::new();
        write_csv(&[r.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains('\r'));
        let back = parse_csv(&text).unwrap();
        let round = |v: f64| format!("{v:.6}").parse::<f64>().unwrap();
        r.lambda_w = round(r.lambda_w);
        r.lambda_g = round(r.lambda_g);
        let m = &mut r.metrics;
        m.psnr = round(m.psnr);
        m.ssim = round(m.ssim);
        m.lr_consistency_l1 = round(m.lr_consistency_l1);
        m.norm_stat = round(m.norm_stat);
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn column_order_and_missing_ms_ssim() {
        let cols: Vec<&str> = HEADER.split(',').collect();
        assert_eq!(cols[0], "run_id");
        assert_eq!(cols[9], "ms_ssim_2");
        assert_eq!(cols[13], "seed");
        let mut r = record();
        r.metrics.ms_ssim = None;
        let mut buf = Vec::new();
        write_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[9], "");
        assert!(parse_csv(&text).unwrap()[0].metrics.ms_ssim.is_none());
    }

    #[test]
    fn rejects_commas_in_fields() {
        let mut r = record();
        r.variant = "a,b".into();
        assert!(write_csv(&[r], &mut Vec::new()).is_err());
    }
}
