use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{DataError, Dataset, FmsReport, SessionKey, TrackingFrame};
use crate::features::{FeatureRegistry, FEATURE_DIM};

pub const TRACKING_ID_COLUMNS: [&str; 3] = ["user_id", "scenario_id", "timestamp_s"];
pub const REPORT_COLUMNS: [&str; 4] = ["user_id", "scenario_id", "report_time_s", "fms"];

/// Renames source headers to canonical ones before column lookup.
///
/// The file format is one `source_name,canonical_name` pair per line; blank
/// lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnMapping {
    renames: HashMap<String, String>,
}

impl ColumnMapping {
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut renames = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (src, dst) = line.split_once(',').ok_or_else(|| DataError::InvalidMapping {
                line: i + 1,
                reason: "expected `source_name,canonical_name`".into(),
            })?;
            let (src, dst) = (src.trim(), dst.trim());
            if src.is_empty() || dst.is_empty() {
                return Err(DataError::InvalidMapping {
                    line: i + 1,
                    reason: "empty column name".into(),
                });
            }
            renames.insert(src.to_string(), dst.to_string());
        }
        Ok(ColumnMapping { renames })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, source: impl Into<String>, canonical: impl Into<String>) {
        self.renames.insert(source.into(), canonical.into());
    }

    pub fn canonical<'a>(&'a self, header: &'a str) -> &'a str {
        self.renames.get(header).map(String::as_str).unwrap_or(header)
    }
}

fn header_positions(headers: &csv::StringRecord, mapping: Option<&ColumnMapping>) -> HashMap<String, usize> {
    let mut pos = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        let name = mapping.map(|m| m.canonical(h)).unwrap_or(h);
        pos.entry(name.to_string()).or_insert(i);
    }
    pos
}

fn require(pos: &HashMap<String, usize>, name: &str) -> Result<usize, DataError> {
    pos.get(name)
        .copied()
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn malformed(record: &csv::StringRecord, column: &str, value: &str) -> DataError {
    DataError::MalformedRow {
        line: line_of(record),
        column: column.to_string(),
        value: value.to_string(),
    }
}

fn cell<'r>(record: &'r csv::StringRecord, idx: usize, column: &str) -> Result<&'r str, DataError> {
    record
        .get(idx)
        .map(str::trim)
        .ok_or_else(|| malformed(record, column, ""))
}

fn reader<R: Read>(stream: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(stream)
}

/// Parse a tracking CSV into frames grouped by session (sessions in key
/// order, frames in file order).
///
/// Empty feature cells are read as NaN so the cleaning stage can impute them.
/// Columns that are not canonical (after mapping) are ignored.
pub fn parse_tracking_csv<R: Read>(
    stream: R,
    schema: &FeatureRegistry,
    mapping: Option<&ColumnMapping>,
) -> Result<Vec<TrackingFrame>, DataError> {
    let mut rdr = reader(stream);
    let pos = header_positions(rdr.headers()?, mapping);
    let user_col = require(&pos, "user_id")?;
    let scen_col = require(&pos, "scenario_id")?;
    let time_col = require(&pos, "timestamp_s")?;
    let feature_cols = schema
        .column_names()
        .map(|name| require(&pos, name))
        .collect::<Result<Vec<_>, _>>()?;
    let names: Vec<&str> = schema.column_names().collect();

    let mut sessions: BTreeMap<SessionKey, Vec<TrackingFrame>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let user = cell(&record, user_col, "user_id")?;
        let scenario = cell(&record, scen_col, "scenario_id")?;
        if user.is_empty() {
            return Err(malformed(&record, "user_id", user));
        }
        if scenario.is_empty() {
            return Err(malformed(&record, "scenario_id", scenario));
        }
        let raw_t = cell(&record, time_col, "timestamp_s")?;
        let t: f64 = raw_t
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite() && *t >= 0.0)
            .ok_or_else(|| malformed(&record, "timestamp_s", raw_t))?;

        let mut features = [0.0; FEATURE_DIM];
        for (slot, (&col, name)) in features.iter_mut().zip(feature_cols.iter().zip(&names)) {
            let raw = cell(&record, col, name)?;
            *slot = if raw.is_empty() {
                f64::NAN
            } else {
                raw.parse().map_err(|_| malformed(&record, name, raw))?
            };
        }

        let session = SessionKey::new(user, scenario);
        let stream = sessions.entry(session.clone()).or_default();
        if let Some(last) = stream.last() {
            if t <= last.t {
                return Err(DataError::NonMonotonicTime {
                    line: line_of(&record),
                    session,
                });
            }
        }
        stream.push(TrackingFrame { session, t, features });
    }
    Ok(sessions.into_values().flatten().collect())
}

pub fn parse_reports_csv<R: Read>(stream: R) -> Result<Vec<FmsReport>, DataError> {
    parse_reports_csv_mapped(stream, None)
}

/// Parse an FMS report CSV; reports come back grouped by session and
/// time-sorted.
pub fn parse_reports_csv_mapped<R: Read>(
    stream: R,
    mapping: Option<&ColumnMapping>,
) -> Result<Vec<FmsReport>, DataError> {
    let mut rdr = reader(stream);
    let pos = header_positions(rdr.headers()?, mapping);
    let cols = REPORT_COLUMNS
        .iter()
        .map(|c| require(&pos, c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut sessions: BTreeMap<SessionKey, Vec<FmsReport>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let user = cell(&record, cols[0], "user_id")?;
        let scenario = cell(&record, cols[1], "scenario_id")?;
        if user.is_empty() || scenario.is_empty() {
            return Err(malformed(&record, "user_id/scenario_id", ""));
        }
        let raw_t = cell(&record, cols[2], "report_time_s")?;
        let t: f64 = raw_t
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite() && *t >= 0.0)
            .ok_or_else(|| malformed(&record, "report_time_s", raw_t))?;
        let raw_score = cell(&record, cols[3], "fms")?;
        let score = parse_score(raw_score).ok_or_else(|| malformed(&record, "fms", raw_score))?;
        if !(0..=10).contains(&score) {
            return Err(DataError::ScoreOutOfRange {
                line: line_of(&record),
                score,
            });
        }
        let session = SessionKey::new(user, scenario);
        sessions.entry(session.clone()).or_default().push(FmsReport {
            session,
            t,
            score: score as u8,
        });
    }
    let mut out = Vec::new();
    for (_, mut list) in sessions {
        list.sort_by(|a, b| a.t.total_cmp(&b.t));
        out.extend(list);
    }
    Ok(out)
}

fn parse_score(raw: &str) -> Option<i64> {
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    // tolerate "4.0" style integral floats
    let v: f64 = raw.parse().ok()?;
    (v.is_finite() && v.fract() == 0.0).then_some(v as i64)
}

pub fn write_tracking_csv<W: Write>(
    out: W,
    schema: &FeatureRegistry,
    frames: &[TrackingFrame],
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = TRACKING_ID_COLUMNS
        .iter()
        .copied()
        .chain(schema.column_names())
        .collect();
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for f in frames {
        row.clear();
        row.push(f.session.user_id.clone());
        row.push(f.session.scenario_id.clone());
        row.push(f.t.to_string());
        row.extend(f.features.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reports_csv<W: Write>(out: W, reports: &[FmsReport]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        w.write_record([
            r.session.user_id.as_str(),
            r.session.scenario_id.as_str(),
            &r.t.to_string(),
            &r.score.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const TRACKING_FILE: &str = "tracking.csv";
pub const REPORTS_FILE: &str = "reports.csv";

/// Write `tracking.csv` and `reports.csv` into `dir`, creating it if needed.
pub fn write_dataset(d: &Dataset, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf), DataError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (tp, rp) = (dir.join(TRACKING_FILE), dir.join(REPORTS_FILE));
    write_tracking_csv(
        std::io::BufWriter::new(File::create(&tp)?),
        crate::features::registry(),
        &d.tracking_frames(),
    )?;
    write_reports_csv(std::io::BufWriter::new(File::create(&rp)?), &d.all_reports())?;
    Ok((tp, rp))
}

/// Load a dataset from a tracking CSV and a reports CSV.
pub fn read_dataset(
    tracking: impl AsRef<Path>,
    reports: impl AsRef<Path>,
    schema: &FeatureRegistry,
    mapping: Option<&ColumnMapping>,
) -> Result<Dataset, DataError> {
    let frames = parse_tracking_csv(std::io::BufReader::new(File::open(tracking.as_ref())?), schema, mapping)?;
    let reps = parse_reports_csv_mapped(std::io::BufReader::new(File::open(reports.as_ref())?), mapping)?;
    Dataset::from_parts(frames, reps, format!("file:{}", tracking.as_ref().display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::registry;
    use proptest::prelude::*;

    fn header() -> String {
        TRACKING_ID_COLUMNS
            .iter()
            .copied()
            .chain(registry().column_names())
            .collect::<Vec<_>>()
            .join(",")
    }

    fn row(user: &str, scen: &str, t: f64, base: f64) -> String {
        let mut cells = vec![user.to_string(), scen.to_string(), t.to_string()];
        cells.extend((0..FEATURE_DIM).map(|i| (base + i as f64).to_string()));
        cells.join(",")
    }

    #[test]
    fn two_row_fixture_groups_sessions() {
        let text = format!(
            "{}\n{}\n{}\n",
            header(),
            row("u2", "beach", 0.0, 1.0),
            row("u1", "roller", 0.0, 2.0)
        );
        let frames = parse_tracking_csv(text.as_bytes(), registry(), None).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].session, SessionKey::new("u1", "roller"));
        assert_eq!(frames[1].session, SessionKey::new("u2", "beach"));
        assert_eq!(frames[0].features[39], 41.0);
    }

    #[test]
    fn missing_column_is_reported_by_name() {
        let hdr = header().replace(",head_euler_z", "");
        let text = format!("{hdr}\n");
        match parse_tracking_csv(text.as_bytes(), registry(), None) {
            Err(DataError::MissingColumn(c)) => assert_eq!(c, "head_euler_z"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_session_span() {
        let mut text = header();
        for i in 0..220 {
            text.push('\n');
            text.push_str(&row("u1", "sea", i as f64 * 0.05, 0.0));
        }
        let frames = parse_tracking_csv(text.as_bytes(), registry(), None).unwrap();
        assert_eq!(frames.len(), 220);
        let span = frames.last().unwrap().t - frames[0].t;
        assert!((span - 10.95).abs() < 1e-9);
    }

    #[test]
    fn malformed_and_non_monotonic_rows() {
        let bad = row("u1", "sea", 0.0, 0.0).replacen(",0,", ",abc,", 1);
        let text = format!("{}\n{}\n", header(), bad);
        assert!(matches!(
            parse_tracking_csv(text.as_bytes(), registry(), None),
            Err(DataError::MalformedRow { line: 2, .. })
        ));

        let text = format!(
            "{}\n{}\n{}\n",
            header(),
            row("u1", "sea", 1.0, 0.0),
            row("u1", "sea", 0.5, 0.0)
        );
        assert!(matches!(
            parse_tracking_csv(text.as_bytes(), registry(), None),
            Err(DataError::NonMonotonicTime { line: 3, .. })
        ));
    }

    #[test]
    fn empty_cell_reads_as_nan() {
        let r = row("u1", "sea", 0.0, 5.0).replacen(",5,", ",,", 1);
        let text = format!("{}\n{}\n", header(), r);
        let frames = parse_tracking_csv(text.as_bytes(), registry(), None).unwrap();
        assert!(frames[0].features[0].is_nan());
    }

    #[test]
    fn mapping_renames_headers() {
        let hdr = header()
            .replace("conv_dist", "ConvergenceDistance")
            .replace("timestamp_s", "Time");
        let text = format!("{}\n{}\n", hdr, row("u1", "sea", 0.0, 0.0));
        assert!(parse_tracking_csv(text.as_bytes(), registry(), None).is_err());
        let mapping =
            ColumnMapping::parse("# legacy headers\nConvergenceDistance,conv_dist\nTime,timestamp_s\n").unwrap();
        let frames = parse_tracking_csv(text.as_bytes(), registry(), Some(&mapping)).unwrap();
        assert_eq!(frames.len(), 1);
        assert!(ColumnMapping::parse("no-comma-here").is_err());
    }

    #[test]
    fn reports_parse_and_range() {
        let text = "user_id,scenario_id,report_time_s,fms\nu1,roller,30.0,4\n";
        let reps = parse_reports_csv(text.as_bytes()).unwrap();
        assert_eq!(reps.len(), 1);
        assert_eq!(reps[0].score, 4);

        let text = "user_id,scenario_id,report_time_s,fms\nu1,roller,30.0,11\n";
        assert!(matches!(
            parse_reports_csv(text.as_bytes()),
            Err(DataError::ScoreOutOfRange { score: 11, .. })
        ));
        let text = "user_id,scenario_id,report_time_s,fms\nu1,roller,30.0,high\n";
        assert!(matches!(
            parse_reports_csv(text.as_bytes()),
            Err(DataError::MalformedRow { .. })
        ));
    }

    #[test]
    fn reports_every_thirty_seconds_come_back_sorted() {
        let mut text = String::from("user_id,scenario_id,report_time_s,fms\n");
        for j in (1..=14).rev() {
            text.push_str(&format!("u1,sea,{},{}\n", j * 30, j % 11));
        }
        let reps = parse_reports_csv(text.as_bytes()).unwrap();
        assert_eq!(reps.len(), 14);
        for w in reps.windows(2) {
            assert!((w[1].t - w[0].t - 30.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn tracking_round_trip_is_exact(
            values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO, 40 * 3),
            t0 in 0.0f64..1e4,
        ) {
            let frames: Vec<TrackingFrame> = (0..3)
                .map(|i| {
                    let mut features = [0.0; FEATURE_DIM];
                    features.copy_from_slice(&values[i * 40..(i + 1) * 40]);
                    TrackingFrame { session: SessionKey::new("u", "s"), t: t0 + i as f64 * 0.05, features }
                })
                .collect();
            let mut buf = Vec::new();
            write_tracking_csv(&mut buf, registry(), &frames).unwrap();
            let back = parse_tracking_csv(buf.as_slice(), registry(), None).unwrap();
            prop_assert_eq!(back, frames);
        }
    }
}
