//! CSV form of labelled and unlabelled feature rows. Categorical values are
//! written as level names.

use std::io::{Read, Write};

use super::features::{Feature, FeatureVector, OutcomeClass};
use super::ReadinessError;

/// Feature columns, optionally followed by `outcome`.
pub const FEATURE_HEADER: [&str; 7] =
    ["kappa_inv_m", "speed_mps", "road_type", "marking_condition", "lighting", "weather", "surface"];

fn row_of(fv: &FeatureVector) -> Vec<String> {
    let mut row = vec![fv.kappa.to_string(), fv.speed.to_string()];
    for f in &Feature::ALL[2..] {
        row.push(f.levels().expect("categorical")[fv.get(*f) as usize].to_string());
    }
    row
}

pub fn write_labeled_csv(data: &[(FeatureVector, OutcomeClass)], writer: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FEATURE_HEADER.to_vec();
    header.push("outcome");
    w.write_record(&header)?;
    for (fv, c) in data {
        let mut row = row_of(fv);
        row.push(c.name().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_features_csv(data: &[FeatureVector], writer: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FEATURE_HEADER)?;
    for fv in data {
        w.write_record(row_of(fv))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_fv(rec: &csv::StringRecord, row: usize) -> Result<FeatureVector, ReadinessError> {
    let bad = |m: String| ReadinessError::Parse { row, reason: m };
    let num = |i: usize| -> Result<f64, ReadinessError> {
        let raw = rec.get(i).unwrap_or("");
        raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(format!("{}: `{raw}` is not a number", FEATURE_HEADER[i])))
    };
    let mut codes = [0u8; 5];
    for (k, f) in Feature::ALL[2..].iter().enumerate() {
        let raw = rec.get(k + 2).unwrap_or("");
        let levels = f.levels().expect("categorical");
        codes[k] = levels
            .iter()
            .position(|l| *l == raw)
            .ok_or_else(|| bad(format!("{}: unknown level `{raw}`, expected one of {}", f.name(), levels.join("|"))))?
            as u8;
    }
    Ok(FeatureVector {
        kappa: num(0)?,
        speed: num(1)?,
        road_type: codes[0],
        marking_condition: codes[1],
        lighting: codes[2],
        weather: codes[3],
        surface: codes[4],
    })
}

fn reader(r: impl Read, with_outcome: bool) -> Result<csv::Reader<impl Read>, ReadinessError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers().map_err(|e| ReadinessError::Schema(e.to_string()))?;
    let mut expected: Vec<&str> = FEATURE_HEADER.to_vec();
    if with_outcome {
        expected.push("outcome");
    }
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(ReadinessError::Schema(format!("expected header `{}`", expected.join(","))));
    }
    Ok(rdr)
}

pub fn read_labeled_csv(r: impl Read) -> Result<Vec<(FeatureVector, OutcomeClass)>, ReadinessError> {
    let mut rdr = reader(r, true)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| ReadinessError::Parse { row, reason: e.to_string() })?;
        let fv = parse_fv(&rec, row)?;
        let raw = rec.get(7).unwrap_or("");
        let class = OutcomeClass::from_name(raw)
            .ok_or_else(|| ReadinessError::Parse { row, reason: format!("unknown outcome `{raw}`") })?;
        out.push((fv, class));
    }
    Ok(out)
}

pub fn read_features_csv(r: impl Read) -> Result<Vec<FeatureVector>, ReadinessError> {
    let mut rdr = reader(r, false)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| ReadinessError::Parse { row, reason: e.to_string() })?;
        out.push(parse_fv(&rec, row)?);
    }
    Ok(out)
}
