//! CSV ingestion and emission for serology, diary and census files.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Writer};

use super::{
    Closeness, Contact, ContactSurvey, DayType, Duration, HouseholdCensus, Participant,
    SerologyDataset, SerologySample, OUTLIER_CONTACTS,
};
use crate::error::{Error, Result};

struct Table {
    path: std::path::PathBuf,
    columns: HashMap<String, usize>,
    rows: Vec<(u64, StringRecord)>,
}

impl Table {
    fn read(path: &Path, required: &[&str]) -> Result<Table> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
        let columns: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        for name in required {
            if !columns.contains_key(*name) {
                return Err(parse_err(path, 1, format!("missing column {name:?}")));
            }
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                parse_err(path, line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            rows.push((line, record));
        }
        Ok(Table {
            path: path.to_path_buf(),
            columns,
            rows,
        })
    }

    fn field<'r>(&self, record: &'r StringRecord, name: &str) -> &'r str {
        record.get(self.columns[name]).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, line: u64, record: &StringRecord, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.field(record, name);
        if raw.is_empty() {
            return Err(parse_err(&self.path, line, format!("missing value for {name:?}")));
        }
        raw.parse::<T>()
            .map_err(|e| parse_err(&self.path, line, format!("bad {name:?} value {raw:?}: {e}")))
    }

    fn optional_f64(&self, line: u64, record: &StringRecord, name: &str) -> Result<Option<f64>> {
        let raw = self.field(record, name);
        if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
            return Ok(None);
        }
        raw.parse::<f64>()
            .map(Some)
            .map_err(|e| parse_err(&self.path, line, format!("bad {name:?} value {raw:?}: {e}")))
    }
}

fn parse_err(path: &Path, line: u64, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn finite_age(path: &Path, line: u64, age: f64) -> Result<f64> {
    if age.is_finite() && age >= 0.0 {
        Ok(age)
    } else {
        Err(parse_err(path, line, format!("age must be a non-negative number, got {age}")))
    }
}

/// Reads `id,age,status`. Subjects aged `<= min_age` (still protected by
/// maternal antibodies) or `>= max_age` are excluded and counted.
pub fn load_serology(path: impl AsRef<Path>, min_age: f64, max_age: f64) -> Result<SerologyDataset> {
    let path = path.as_ref();
    let table = Table::read(path, &["id", "age", "status"])?;
    if table.rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no data rows", path.display())));
    }
    let mut out = SerologyDataset::default();
    for (line, record) in &table.rows {
        let id = table.field(record, "id").to_string();
        let age = finite_age(path, *line, table.parse::<f64>(*line, record, "age")?)?;
        let status = table.field(record, "status");
        let immune = match status {
            "0" => false,
            "1" => true,
            "" => return Err(parse_err(path, *line, "missing status".into())),
            other => {
                return Err(parse_err(path, *line, format!("status must be 0 or 1, got {other:?}")))
            }
        };
        if age <= min_age {
            out.excluded_below_min += 1;
            continue;
        }
        if age >= max_age {
            out.excluded_above_max += 1;
            continue;
        }
        out.samples.push(SerologySample {
            id,
            age,
            immune,
            age_known_exactly: age.fract() != 0.0,
        });
    }
    Ok(out)
}

/// Reads the participant and contact files of a one-day diary survey.
///
/// Contacts with neither age bound are dropped and counted; a single
/// missing bound is taken from the other. Participants reporting more than
/// [`OUTLIER_CONTACTS`] contacts are excluded. Weights start at 1.
pub fn load_contact_survey(
    participants_path: impl AsRef<Path>,
    contacts_path: impl AsRef<Path>,
) -> Result<ContactSurvey> {
    let ppath = participants_path.as_ref();
    let cpath = contacts_path.as_ref();
    let ptable = Table::read(ppath, &["part_id", "part_age", "household_size", "day_type"])?;
    if ptable.rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no participants", ppath.display())));
    }
    let mut participants = Vec::with_capacity(ptable.rows.len());
    let mut index = HashMap::new();
    for (line, record) in &ptable.rows {
        let id = ptable.field(record, "part_id").to_string();
        if id.is_empty() {
            return Err(parse_err(ppath, *line, "missing part_id".into()));
        }
        let age = finite_age(ppath, *line, ptable.parse::<f64>(*line, record, "part_age")?)?;
        let household_size: u32 = ptable.parse(*line, record, "household_size")?;
        if household_size == 0 {
            return Err(parse_err(ppath, *line, "household size must be at least 1".into()));
        }
        let day_type: DayType = ptable.parse(*line, record, "day_type")?;
        if index.insert(id.clone(), participants.len()).is_some() {
            return Err(Error::DuplicateParticipant(id));
        }
        participants.push(Participant {
            id,
            age,
            age_known_exactly: age.fract() != 0.0,
            household_size,
            day_type,
            weight: 1.0,
            contacts: Vec::new(),
        });
    }

    let ctable = Table::read(
        cpath,
        &["part_id", "cnt_age_low", "cnt_age_high", "closeness", "duration"],
    )?;
    let mut dropped = 0;
    for (line, record) in &ctable.rows {
        let id = ctable.field(record, "part_id");
        let &i = index
            .get(id)
            .ok_or_else(|| Error::OrphanContact(id.to_string()))?;
        let closeness: Closeness = ctable.parse(*line, record, "closeness")?;
        let duration: Duration = ctable.parse(*line, record, "duration")?;
        let low = ctable.optional_f64(*line, record, "cnt_age_low")?;
        let high = ctable.optional_f64(*line, record, "cnt_age_high")?;
        let (age_low, age_high) = match (low, high) {
            (None, None) => {
                dropped += 1;
                continue;
            }
            (Some(a), None) | (None, Some(a)) => (a, a),
            (Some(a), Some(b)) => (a, b),
        };
        let age_low = finite_age(cpath, *line, age_low)?;
        let age_high = finite_age(cpath, *line, age_high)?;
        if age_low > age_high {
            return Err(parse_err(
                cpath,
                *line,
                format!("contact age bounds reversed: {age_low} > {age_high}"),
            ));
        }
        participants[i].contacts.push(Contact {
            age_low,
            age_high,
            closeness,
            duration,
        });
    }

    let mut excluded_outliers = Vec::new();
    participants.retain(|p| {
        let keep = p.contacts.len() <= OUTLIER_CONTACTS;
        if !keep {
            excluded_outliers.push(p.id.clone());
        }
        keep
    });
    Ok(ContactSurvey {
        participants,
        dropped_missing_age: dropped,
        excluded_outliers,
    })
}

/// Reads `age,household_size,count`.
pub fn load_census(path: impl AsRef<Path>) -> Result<HouseholdCensus> {
    let path = path.as_ref();
    let table = Table::read(path, &["age", "household_size", "count"])?;
    let mut census = HouseholdCensus::default();
    for (line, record) in &table.rows {
        let age: usize = table.parse(*line, record, "age")?;
        let size: usize = table.parse(*line, record, "household_size")?;
        let count: f64 = table.parse(*line, record, "count")?;
        if size == 0 || !(count.is_finite() && count >= 0.0) {
            return Err(parse_err(path, *line, "household size must be >= 1 and count >= 0".into()));
        }
        census.add(age, size, count);
    }
    if table.rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no data rows", path.display())));
    }
    Ok(census)
}

fn writer(path: &Path) -> Result<Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn write_serology(path: impl AsRef<Path>, data: &SerologyDataset) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let mut put = || -> std::result::Result<(), csv::Error> {
        w.write_record(["id", "age", "status"])?;
        for s in &data.samples {
            w.write_record([s.id.clone(), s.age.to_string(), u8::from(s.immune).to_string()])?;
        }
        w.flush()?;
        Ok(())
    };
    put().map_err(|e| csv_err(path, e))
}

pub fn write_participants(path: impl AsRef<Path>, survey: &ContactSurvey) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let mut put = || -> std::result::Result<(), csv::Error> {
        w.write_record(["part_id", "part_age", "household_size", "day_type"])?;
        for p in &survey.participants {
            w.write_record([
                p.id.clone(),
                p.age.to_string(),
                p.household_size.to_string(),
                p.day_type.code().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    put().map_err(|e| csv_err(path, e))
}

pub fn write_contacts(path: impl AsRef<Path>, survey: &ContactSurvey) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let mut put = || -> std::result::Result<(), csv::Error> {
        w.write_record(["part_id", "cnt_age_low", "cnt_age_high", "closeness", "duration"])?;
        for p in &survey.participants {
            for c in &p.contacts {
                w.write_record([
                    p.id.clone(),
                    c.age_low.to_string(),
                    c.age_high.to_string(),
                    c.closeness.code().to_string(),
                    c.duration.code().to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    put().map_err(|e| csv_err(path, e))
}

pub fn write_census(path: impl AsRef<Path>, census: &HouseholdCensus) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let mut put = || -> std::result::Result<(), csv::Error> {
        w.write_record(["age", "household_size", "count"])?;
        for (age, row) in census.counts.iter().enumerate() {
            for (k, &count) in row.iter().enumerate() {
                if count > 0.0 {
                    w.write_record([age.to_string(), (k + 1).to_string(), count.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    };
    put().map_err(|e| csv_err(path, e))
}
