//! Longitudinal ordinal panels: subjects observed on a common grid of occasions,
//! with optional responses, an optional baseline covariate `x` and fully observed
//! time-varying covariates `z`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Joint observation status of the response and the baseline covariate at one occasion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum MissingCode {
    /// Response and covariate both missing.
    Neither = 0,
    /// Response missing, covariate observed.
    CovariateOnly = 1,
    /// Response observed, covariate missing.
    ResponseOnly = 2,
    /// Both observed.
    Both = 3,
}

impl MissingCode {
    pub fn from_flags(response_observed: bool, x_observed: bool) -> Self {
        match (response_observed, x_observed) {
            (false, false) => MissingCode::Neither,
            (false, true) => MissingCode::CovariateOnly,
            (true, false) => MissingCode::ResponseOnly,
            (true, true) => MissingCode::Both,
        }
    }

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn response_observed(self) -> bool {
        matches!(self, MissingCode::ResponseOnly | MissingCode::Both)
    }

    pub fn x_observed(self) -> bool {
        matches!(self, MissingCode::CovariateOnly | MissingCode::Both)
    }
}

/// One subject's record. `occasions[k]` is the index (into the panel's time grid)
/// of the subject's k-th row; `responses`, `z` align with it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub occasions: Vec<usize>,
    pub responses: Vec<Option<u8>>,
    pub x: Option<f64>,
    pub z: Vec<Vec<f64>>,
}

impl SubjectRecord {
    pub fn len(&self) -> usize {
        self.occasions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occasions.is_empty()
    }

    pub fn r_codes(&self) -> Vec<MissingCode> {
        self.responses
            .iter()
            .map(|r| MissingCode::from_flags(r.is_some(), self.x.is_some()))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.x.is_some() && self.responses.iter().all(Option::is_some)
    }

    /// Position of global occasion `t` within this subject, if present.
    pub fn position_of(&self, t: usize) -> Option<usize> {
        self.occasions.binary_search(&t).ok()
    }
}

/// A validated panel of ordinal responses with `categories` levels on a grid of
/// `occasions` time points and `q` time-varying covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalPanel {
    subjects: Vec<SubjectRecord>,
    categories: usize,
    occasions: usize,
    q: usize,
    time_labels: Vec<i64>,
}

impl OrdinalPanel {
    /// Build a panel whose time grid is `0..occasions`.
    pub fn new(
        subjects: Vec<SubjectRecord>,
        categories: usize,
        occasions: usize,
        q: usize,
    ) -> Result<Self> {
        let labels = (0..occasions as i64).collect();
        Self::with_time_labels(subjects, categories, occasions, q, labels)
    }

    pub fn with_time_labels(
        subjects: Vec<SubjectRecord>,
        categories: usize,
        occasions: usize,
        q: usize,
        time_labels: Vec<i64>,
    ) -> Result<Self> {
        if categories < 2 {
            return Err(Error::InvalidPanel(format!(
                "need at least 2 response categories, got {categories}"
            )));
        }
        if occasions == 0 || time_labels.len() != occasions {
            return Err(Error::InvalidPanel("time grid is empty or mislabelled".into()));
        }
        for s in &subjects {
            let n = s.occasions.len();
            if n == 0 || n > occasions {
                return Err(Error::InvalidPanel(format!(
                    "subject {} has {n} occasions (allowed 1..={occasions})",
                    s.id
                )));
            }
            if s.responses.len() != n || s.z.len() != n {
                return Err(Error::InvalidPanel(format!(
                    "subject {} has misaligned occasion arrays",
                    s.id
                )));
            }
            if s.occasions.windows(2).any(|w| w[0] >= w[1]) || s.occasions[n - 1] >= occasions {
                return Err(Error::InvalidPanel(format!(
                    "subject {} occasions are not strictly increasing within the grid",
                    s.id
                )));
            }
            for r in s.responses.iter().flatten() {
                if *r == 0 || *r as usize > categories {
                    return Err(Error::InvalidPanel(format!(
                        "subject {} has response {r} outside 1..={categories}",
                        s.id
                    )));
                }
            }
            if s.z.iter().any(|row| row.len() != q || row.iter().any(|v| !v.is_finite())) {
                return Err(Error::InvalidPanel(format!(
                    "subject {} has a z row that is not {q} finite values",
                    s.id
                )));
            }
            if s.x.is_some_and(|v| !v.is_finite()) {
                return Err(Error::InvalidPanel(format!("subject {} has non-finite x", s.id)));
            }
        }
        Ok(OrdinalPanel {
            subjects,
            categories,
            occasions,
            q,
            time_labels,
        })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Number of response categories J.
    pub fn categories(&self) -> usize {
        self.categories
    }

    /// Number of occasions T on the panel's grid.
    pub fn occasions(&self) -> usize {
        self.occasions
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn time_labels(&self) -> &[i64] {
        &self.time_labels
    }

    /// Regression dimension p = (J-1) + 1 + q.
    pub fn param_dim(&self) -> usize {
        self.categories - 1 + 1 + self.q
    }

    /// True when every subject has a row for every occasion.
    pub fn is_balanced(&self) -> bool {
        self.subjects.iter().all(|s| s.occasions.len() == self.occasions)
    }

    pub fn has_missing(&self) -> bool {
        self.subjects.iter().any(|s| !s.is_complete())
    }

    pub fn any_missing_x(&self) -> bool {
        self.subjects.iter().any(|s| s.x.is_none())
    }

    pub fn any_missing_response(&self) -> bool {
        self.subjects
            .iter()
            .any(|s| s.responses.iter().any(Option::is_none))
    }

    /// Same grid and dimensions, different subjects.
    pub fn with_subjects(&self, subjects: Vec<SubjectRecord>) -> Result<Self> {
        Self::with_time_labels(
            subjects,
            self.categories,
            self.occasions,
            self.q,
            self.time_labels.clone(),
        )
    }

    /// Share of subject-occasions that are not fully observed (code other than 3).
    pub fn incomplete_share(&self) -> f64 {
        let mut total = 0usize;
        let mut incomplete = 0usize;
        for s in &self.subjects {
            for code in s.r_codes() {
                total += 1;
                if code != MissingCode::Both {
                    incomplete += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            incomplete as f64 / total as f64
        }
    }

    /// Read a long-format CSV with header `subject,time,response,x,z1..zq`.
    /// Empty cells and `NA` mark missing values. The number of categories is
    /// the largest observed response unless `categories` is given.
    pub fn from_csv_reader<R: Read>(reader: R, categories: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let expected = ["subject", "time", "response", "x"];
        if names.len() < 4 || names[..4] != expected {
            return Err(Error::MalformedData {
                row: 1,
                message: format!("header must start with subject,time,response,x; got {names:?}"),
            });
        }
        let q = names.len() - 4;
        for (k, name) in names[4..].iter().enumerate() {
            if *name != format!("z{}", k + 1) {
                return Err(Error::MalformedData {
                    row: 1,
                    message: format!("covariate column {} must be named z{}", name, k + 1),
                });
            }
        }

        struct Row {
            time: i64,
            response: Option<u8>,
            x: Option<f64>,
            z: Vec<f64>,
            line: usize,
        }
        let mut order: Vec<String> = Vec::new();
        let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
        for (k, rec) in rdr.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| Error::MalformedData {
                row: line,
                message: e.to_string(),
            })?;
            if rec.len() != names.len() {
                return Err(Error::MalformedData {
                    row: line,
                    message: format!("expected {} fields, found {}", names.len(), rec.len()),
                });
            }
            let bad = |message: String| Error::MalformedData { row: line, message };
            let id = rec[0].to_string();
            if id.is_empty() {
                return Err(bad("empty subject identifier".into()));
            }
            let time: i64 = rec[1]
                .parse()
                .map_err(|_| bad(format!("time '{}' is not an integer", &rec[1])))?;
            let response = match parse_optional(&rec[2]) {
                None => None,
                Some(s) => {
                    let v: u8 = s
                        .parse()
                        .map_err(|_| bad(format!("response '{s}' is not a category index")))?;
                    if v == 0 || categories.is_some_and(|j| v as usize > j) {
                        return Err(bad(format!("response {v} outside the category range")));
                    }
                    Some(v)
                }
            };
            let x = match parse_optional(&rec[3]) {
                None => None,
                Some(s) => Some(
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| bad(format!("x '{s}' is not a number")))?,
                ),
            };
            let mut z = Vec::with_capacity(q);
            for (c, cell) in rec.iter().skip(4).enumerate() {
                let s = parse_optional(cell)
                    .ok_or_else(|| bad(format!("z{} is missing; covariates must be observed", c + 1)))?;
                z.push(
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| bad(format!("z{} '{s}' is not a number", c + 1)))?,
                );
            }
            if !rows.contains_key(&id) {
                order.push(id.clone());
            }
            rows.entry(id).or_default().push(Row {
                time,
                response,
                x,
                z,
                line,
            });
        }
        if order.is_empty() {
            return Err(Error::MalformedData {
                row: 1,
                message: "no data rows".into(),
            });
        }

        let mut labels: Vec<i64> = rows.values().flatten().map(|r| r.time).collect();
        labels.sort_unstable();
        labels.dedup();
        let index: HashMap<i64, usize> = labels.iter().enumerate().map(|(k, &t)| (t, k)).collect();
        let max_response = rows
            .values()
            .flatten()
            .filter_map(|r| r.response)
            .max()
            .unwrap_or(0) as usize;
        let j = categories.unwrap_or(max_response.max(2));

        let mut subjects = Vec::with_capacity(order.len());
        for id in order {
            let mut subject_rows = rows.remove(&id).unwrap_or_default();
            subject_rows.sort_by_key(|r| r.time);
            for w in subject_rows.windows(2) {
                if w[0].time == w[1].time {
                    return Err(Error::MalformedData {
                        row: w[1].line,
                        message: format!("subject {id} repeats time {}", w[1].time),
                    });
                }
            }
            let xs: Vec<Option<f64>> = subject_rows.iter().map(|r| r.x).collect();
            let x = xs.iter().flatten().next().copied();
            if let Some(bad_row) = subject_rows
                .iter()
                .find(|r| r.x.is_some_and(|v| Some(v) != x) || (r.x.is_none() && x.is_some()))
            {
                return Err(Error::MalformedData {
                    row: bad_row.line,
                    message: format!("subject {id} has a baseline x that varies across rows"),
                });
            }
            subjects.push(SubjectRecord {
                id,
                occasions: subject_rows.iter().map(|r| index[&r.time]).collect(),
                responses: subject_rows.iter().map(|r| r.response).collect(),
                x,
                z: subject_rows.into_iter().map(|r| r.z).collect(),
            });
        }
        let t = labels.len();
        Self::with_time_labels(subjects, j, t, q, labels)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, categories: Option<usize>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, categories)
    }

    /// Write the panel in the long CSV format accepted by [`OrdinalPanel::from_csv_reader`].
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["subject".to_string(), "time".into(), "response".into(), "x".into()];
        header.extend((1..=self.q).map(|k| format!("z{k}")));
        wtr.write_record(&header)?;
        for s in &self.subjects {
            for (k, &t) in s.occasions.iter().enumerate() {
                let mut rec = vec![
                    s.id.clone(),
                    self.time_labels[t].to_string(),
                    s.responses[k].map_or("NA".into(), |v| v.to_string()),
                    s.x.map_or("NA".into(), |v| format!("{v}")),
                ];
                rec.extend(s.z[k].iter().map(|v| format!("{v}")));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn parse_optional(cell: &str) -> Option<&str> {
    let s = cell.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        None
    } else {
        Some(s)
    }
}

/// Indicator vector of one response: `Y_j = 1{O = j}` for j < J; the reference
/// category J is all zeros.
pub fn indicator(category: u8, categories: usize) -> Result<DVector<f64>> {
    if category == 0 || category as usize > categories {
        return Err(Error::MalformedData {
            row: 0,
            message: format!("response {category} outside 1..={categories}"),
        });
    }
    let mut y = DVector::zeros(categories - 1);
    if (category as usize) < categories {
        y[category as usize - 1] = 1.0;
    }
    Ok(y)
}

/// Recover the category from an indicator block.
pub fn category_of(y: &DVector<f64>) -> u8 {
    match y.iter().position(|&v| v == 1.0) {
        Some(k) => (k + 1) as u8,
        None => (y.len() + 1) as u8,
    }
}

/// A subject's stacked indicator vector with a mask of observed slots.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedIndicators {
    pub y: DVector<f64>,
    pub observed: Vec<bool>,
}

/// Stack indicator blocks per subject; missing responses keep zero-filled,
/// masked slots so that positions align by (occasion, category).
pub fn expand_indicators(panel: &OrdinalPanel) -> Result<Vec<StackedIndicators>> {
    let jm = panel.categories() - 1;
    panel
        .subjects()
        .iter()
        .map(|s| {
            let mut y = DVector::zeros(s.len() * jm);
            let mut observed = vec![false; s.len() * jm];
            for (k, r) in s.responses.iter().enumerate() {
                if let Some(c) = r {
                    let block = indicator(*c, panel.categories())?;
                    y.rows_mut(k * jm, jm).copy_from(&block);
                    observed[k * jm..(k + 1) * jm].iter_mut().for_each(|o| *o = true);
                }
            }
            Ok(StackedIndicators { y, observed })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_blocks() {
        assert_eq!(indicator(2, 3).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(indicator(3, 3).unwrap().as_slice(), &[0.0, 0.0]);
        assert_eq!(indicator(1, 2).unwrap().as_slice(), &[1.0]);
        assert!(indicator(4, 3).is_err());
        assert!(indicator(0, 3).is_err());
    }

    #[test]
    fn missing_codes() {
        assert_eq!(MissingCode::from_flags(true, true).value(), 3);
        assert_eq!(MissingCode::from_flags(false, true).value(), 1);
        assert_eq!(MissingCode::from_flags(true, false).value(), 2);
        assert_eq!(MissingCode::from_flags(false, false).value(), 0);
    }

    #[test]
    fn csv_round_trip_and_gaps() {
        let text = "subject,time,response,x,z1\n\
                    a,1,2,1,0.5\n\
                    a,3,NA,1,0.1\n\
                    b,1,3,,0.2\n\
                    b,2,1,NA,-0.3\n\
                    b,3,,NA,0.0\n";
        let panel = OrdinalPanel::from_csv_reader(text.as_bytes(), None).unwrap();
        assert_eq!(panel.n(), 2);
        assert_eq!(panel.occasions(), 3);
        assert_eq!(panel.categories(), 3);
        let a = &panel.subjects()[0];
        assert_eq!(a.occasions, vec![0, 2]);
        assert_eq!(a.responses, vec![Some(2), None]);
        let b = &panel.subjects()[1];
        assert_eq!(b.x, None);
        assert_eq!(
            b.r_codes(),
            vec![MissingCode::ResponseOnly, MissingCode::ResponseOnly, MissingCode::Neither]
        );

        let mut out = Vec::new();
        panel.write_csv(&mut out).unwrap();
        let again = OrdinalPanel::from_csv_reader(out.as_slice(), None).unwrap();
        assert_eq!(again, panel);
    }

    #[test]
    fn csv_reports_row_numbers() {
        let text = "subject,time,response,x,z1\na,1,2,1,0.5\na,2,x,1,0.5\n";
        match OrdinalPanel::from_csv_reader(text.as_bytes(), None) {
            Err(Error::MalformedData { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let dup = "subject,time,response,x,z1\na,1,2,1,0.5\na,1,1,1,0.5\n";
        assert!(matches!(
            OrdinalPanel::from_csv_reader(dup.as_bytes(), None),
            Err(Error::MalformedData { row: 3, .. })
        ));
        let missing_z = "subject,time,response,x,z1\na,1,2,1,NA\n";
        assert!(OrdinalPanel::from_csv_reader(missing_z.as_bytes(), None).is_err());
        let out_of_range = "subject,time,response,x,z1\na,1,4,1,0\n";
        assert!(OrdinalPanel::from_csv_reader(out_of_range.as_bytes(), Some(3)).is_err());
    }

    #[test]
    fn expanded_indicators_keep_masked_slots() {
        let s = SubjectRecord {
            id: "s".into(),
            occasions: vec![0, 1, 2],
            responses: vec![Some(1), None, Some(3)],
            x: Some(0.0),
            z: vec![vec![]; 3],
        };
        let panel = OrdinalPanel::new(vec![s], 3, 3, 0).unwrap();
        let st = &expand_indicators(&panel).unwrap()[0];
        assert_eq!(st.y.as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(st.observed, vec![true, true, false, false, true, true]);
    }
}
