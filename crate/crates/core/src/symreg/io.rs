use super::{Expr, HofEntry};
use crate::error::{Error, Result};

pub const HOF_HEADER: [&str; 5] = [
    "complexity",
    "expression_size",
    "loss",
    "test_accuracy",
    "expression",
];

/// CSV of a hall of fame; `test_accuracy` is empty when not measured.
pub fn hall_of_fame_csv(front: &[HofEntry]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HOF_HEADER)?;
    for e in front {
        w.write_record([
            e.complexity.to_string(),
            e.expression_size.to_string(),
            e.loss.to_string(),
            e.test_accuracy.map_or(String::new(), |a| a.to_string()),
            e.expr.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Rows of a hall-of-fame CSV as `(complexity, loss, test_accuracy, expr)`.
pub fn read_hall_of_fame_csv(bytes: &[u8]) -> Result<Vec<(u32, f64, Option<f64>, Expr)>> {
    let mut r = csv::Reader::from_reader(bytes);
    if r.headers()?.iter().ne(HOF_HEADER) {
        return Err(Error::Format("unexpected hall-of-fame header".into()));
    }
    let bad = |m: String| Error::Format(format!("hall of fame: {m}"));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let c: u32 = rec[0]
            .parse()
            .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
        let loss: f64 = rec[2]
            .parse()
            .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        let acc = match &rec[3] {
            "" => None,
            s => Some(
                s.parse()
                    .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            ),
        };
        out.push((c, loss, acc, rec[4].parse()?));
    }
    Ok(out)
}
