//! On-disk formats shared by several modules: pose CSV files and binary PGM
//! frames.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, Vector3};

use crate::error::{Error, Result};
use crate::se3::{Pose, PoseSequence};

pub const POSE_CSV_HEADER: &str = "t,qw,qx,qy,qz,tx,ty,tz,valid";

/// Quaternions in files are renormalized when this close to unit norm.
const FILE_QUATERNION_TOLERANCE: f64 = 1e-6;

/// Writes a pose sequence. Timestamps use nine decimals; all other values are
/// printed in shortest round-trip form so a re-read is bit-exact.
pub fn write_pose_csv(path: &Path, seq: &PoseSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pose_csv_to(&mut w, seq)?;
    w.flush()?;
    Ok(())
}

pub fn write_pose_csv_to(w: &mut impl Write, seq: &PoseSequence) -> Result<()> {
    writeln!(w, "{POSE_CSV_HEADER}")?;
    for p in seq.iter() {
        let q = p.rotation.quaternion();
        writeln!(
            w,
            "{:.9},{},{},{},{},{},{},{},{}",
            p.t,
            q.w,
            q.i,
            q.j,
            q.k,
            p.translation.x,
            p.translation.y,
            p.translation.z,
            u8::from(p.valid)
        )?;
    }
    Ok(())
}

pub fn read_pose_csv(path: &Path) -> Result<PoseSequence> {
    let file = File::open(path)?;
    read_pose_csv_from(BufReader::new(file), path)
}

pub fn read_pose_csv_from(reader: impl Read, path: &Path) -> Result<PoseSequence> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .iter()
        .map(str::trim)
        .collect::<Vec<_>>()
        .join(",");
    if header != POSE_CSV_HEADER {
        return Err(Error::parse(
            path,
            1,
            format!("expected header `{POSE_CSV_HEADER}`, found `{header}`"),
        ));
    }
    let mut poses = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 9 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 9 fields, found {}", record.len()),
            ));
        }
        let mut v = [0.0f64; 8];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = record[i].trim().parse::<f64>().map_err(|e| {
                Error::parse(path, line, format!("field {}: {e}", i + 1))
            })?;
        }
        let valid = match record[8].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("valid must be 0 or 1, found `{other}`"),
                ))
            }
        };
        let q = Quaternion::new(v[1], v[2], v[3], v[4]);
        let pose = Pose::from_raw_quaternion(
            v[0],
            q,
            Vector3::new(v[5], v[6], v[7]),
            valid,
            FILE_QUATERNION_TOLERANCE,
        )
        .map_err(|e| Error::parse(path, line, e.to_string()))?;
        poses.push(pose);
    }
    PoseSequence::new(poses).map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// Binary 8-bit PGM (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::invalid("raster size does not match dimensions"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(data)?;
    w.flush()?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut tokens = Vec::new();
    let mut line_no = 0u64;
    while tokens.len() < 4 {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::parse(path, line_no, "truncated PGM header"));
        }
        line_no += 1;
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_owned));
    }
    if tokens[0] != "P5" {
        return Err(Error::parse(path, 1, format!("expected P5 magic, found {}", tokens[0])));
    }
    let parse = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|e| Error::parse(path, line_no, format!("bad header value `{s}`: {e}")))
    };
    let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval != 255 {
        return Err(Error::parse(path, line_no, "only 8-bit PGM is supported"));
    }
    let mut data = vec![0u8; width * height];
    r.read_exact(&mut data)
        .map_err(|e| Error::parse(path, line_no + 1, format!("raster: {e}")))?;
    Ok((width, height, data))
}

/// Writes any serializable value as pretty JSON.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line() as u64, e.to_string()))
}
