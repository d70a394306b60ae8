//! Snapshot files: a versioned CSV of the location history and the consent
//! ledger as JSON lines.

use std::io::{self, BufRead, Write};

use super::{ConsentRecord, LocationPoint, PdsError, PersonalDataStore};

pub const SNAPSHOT_HEADER: &str = "# pds-snapshot v1";

fn snapshot_err(line: usize, reason: impl ToString) -> PdsError {
    PdsError::Snapshot {
        line,
        reason: reason.to_string(),
    }
}

impl PersonalDataStore {
    /// Header line, then `lat,lon,t` per point in time order.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{SNAPSHOT_HEADER}")?;
        for p in &self.locations {
            writeln!(out, "{},{},{}", p.lat(), p.lon(), p.t())?;
        }
        Ok(())
    }

    /// Replaces the location history with the snapshot's points.
    pub fn read_snapshot<R: BufRead>(&mut self, input: R) -> Result<(), PdsError> {
        let mut lines = input.lines().enumerate();
        match lines.next() {
            Some((_, Ok(header))) if header.trim() == SNAPSHOT_HEADER => {}
            Some((_, Ok(other))) => {
                return Err(snapshot_err(1, format!("unsupported header {other:?}")))
            }
            Some((_, Err(e))) => return Err(snapshot_err(1, e)),
            None => return Err(snapshot_err(1, "missing header")),
        }
        let mut points = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| snapshot_err(lineno, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let [lat, lon, t] = fields[..] else {
                return Err(snapshot_err(lineno, "expected lat,lon,t"));
            };
            let lat: f64 = lat.trim().parse().map_err(|e| snapshot_err(lineno, e))?;
            let lon: f64 = lon.trim().parse().map_err(|e| snapshot_err(lineno, e))?;
            let t: i64 = t.trim().parse().map_err(|e| snapshot_err(lineno, e))?;
            points.push(LocationPoint::new(lat, lon, t).map_err(|e| snapshot_err(lineno, e))?);
        }
        points.sort_by_key(LocationPoint::t);
        self.locations = points;
        Ok(())
    }

    pub fn write_ledger<W: Write>(&self, mut out: W) -> io::Result<()> {
        for record in &self.ledger {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ledger<R: BufRead>(input: R) -> Result<Vec<ConsentRecord>, PdsError> {
        let mut out = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line.map_err(|e| snapshot_err(idx + 1, e))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| snapshot_err(idx + 1, e))?);
        }
        Ok(out)
    }
}
