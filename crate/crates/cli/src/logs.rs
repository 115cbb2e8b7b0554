//! Plain-text logs for the three input streams and the query file.
//!
//! Every format is line oriented, whitespace separated, and allows blank
//! lines and `#` comments. Floats are written with the shortest
//! representation that parses back to the same value.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use nanomap::{CameraModel, GaussianPoint, PointCloud, RigidTransform, TimedPose};
use thiserror::Error;

/// Largest tolerated deviation of a logged quaternion from unit norm.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: io::Error,
    },
}

/// Body-pose batches keyed by the time they become known.
pub type CorrectionBatches = Vec<(f64, Vec<TimedPose<f64>>)>;
/// Body-frame query sets keyed by the time they are issued.
pub type QuerySteps = Vec<(f64, Vec<GaussianPoint<f64>>)>;

/// Clouds sharing one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudLog {
    pub camera: Option<CameraModel<f64>>,
    pub clouds: Vec<(f64, Arc<PointCloud<f64>>)>,
}

struct Lines<R> {
    file: String,
    inner: io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(file: &str, reader: R) -> Self {
        Self {
            file: file.to_string(),
            inner: reader.lines(),
            line: 0,
        }
    }

    /// Next non-blank, non-comment line, split into fields.
    fn next_fields(&mut self) -> Result<Option<Vec<String>>, LogError> {
        for l in self.inner.by_ref() {
            self.line += 1;
            let l = l.map_err(|source| LogError::Io {
                file: self.file.clone(),
                source,
            })?;
            let body = l.split('#').next().unwrap_or("").trim();
            if !body.is_empty() {
                return Ok(Some(body.split_whitespace().map(str::to_string).collect()));
            }
        }
        Ok(None)
    }

    fn error(&self, message: impl Into<String>) -> LogError {
        LogError::Parse {
            file: self.file.clone(),
            line: self.line,
            message: message.into(),
        }
    }

    fn floats(&self, fields: &[String], expected: usize, what: &str) -> Result<Vec<f64>, LogError> {
        if fields.len() != expected {
            return Err(self.error(format!("{what}: expected {expected} fields, found {}", fields.len())));
        }
        fields.iter().map(|f| self.float(f)).collect()
    }

    fn float(&self, field: &str) -> Result<f64, LogError> {
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(format!("'{field}' is not a finite number"))),
        }
    }

    fn usize(&self, field: &str) -> Result<usize, LogError> {
        field.parse().map_err(|_| self.error(format!("'{field}' is not a non-negative integer")))
    }
}

/// Pose built from a logged translation and `w x y z` quaternion. Export
/// routes poses through this too, so a written and re-read log yields
/// bit-identical transforms.
pub fn pose_from_record(translation: [f64; 3], wxyz: [f64; 4]) -> RigidTransform<f64> {
    let q = UnitQuaternion::from_quaternion(Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]));
    RigidTransform::from_quaternion(q, Vector3::from(translation))
}

/// The pose a log round trip reproduces exactly.
pub fn canonical_pose(pose: &RigidTransform<f64>) -> RigidTransform<f64> {
    let (t, q) = pose_record(pose);
    pose_from_record(t, q)
}

fn pose_record(pose: &RigidTransform<f64>) -> ([f64; 3], [f64; 4]) {
    let q = pose.quaternion();
    let t = pose.translation();
    ([t.x, t.y, t.z], [q.w, q.i, q.j, q.k])
}

fn parse_pose_fields<R: BufRead>(lines: &Lines<R>, fields: &[String]) -> Result<TimedPose<f64>, LogError> {
    let v = lines.floats(fields, 8, "pose (time tx ty tz qw qx qy qz)")?;
    let norm = (v[4] * v[4] + v[5] * v[5] + v[6] * v[6] + v[7] * v[7]).sqrt();
    if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
        return Err(lines.error(format!("quaternion norm {norm} is not 1 within {QUATERNION_TOLERANCE}")));
    }
    Ok(TimedPose::new(v[0], pose_from_record([v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]])))
}

fn write_pose_line(out: &mut String, p: &TimedPose<f64>) {
    let (t, q) = pose_record(&p.pose);
    let _ = writeln!(out, "{} {} {} {} {} {} {} {}", p.time, t[0], t[1], t[2], q[0], q[1], q[2], q[3]);
}

pub fn read_poses<R: BufRead>(file: &str, reader: R) -> Result<Vec<TimedPose<f64>>, LogError> {
    let mut lines = Lines::new(file, reader);
    let mut out: Vec<TimedPose<f64>> = Vec::new();
    while let Some(fields) = lines.next_fields()? {
        let pose = parse_pose_fields(&lines, &fields)?;
        if let Some(prev) = out.last() {
            if !(pose.time > prev.time) {
                return Err(lines.error(format!("time {} does not follow {}", pose.time, prev.time)));
            }
        }
        out.push(pose);
    }
    Ok(out)
}

pub fn write_poses<W: Write>(mut w: W, poses: &[TimedPose<f64>]) -> io::Result<()> {
    writeln!(w, "# time tx ty tz qw qx qy qz")?;
    let mut buf = String::new();
    for p in poses {
        write_pose_line(&mut buf, p);
    }
    w.write_all(buf.as_bytes())
}

pub fn read_corrections<R: BufRead>(file: &str, reader: R) -> Result<CorrectionBatches, LogError> {
    let mut lines = Lines::new(file, reader);
    let mut out: CorrectionBatches = Vec::new();
    while let Some(fields) = lines.next_fields()? {
        if fields[0] == "batch" {
            let v = lines.floats(&fields[1..], 1, "batch header (batch time)")?;
            if let Some((prev, _)) = out.last() {
                if !(v[0] > *prev) {
                    return Err(lines.error(format!("batch time {} does not follow {prev}", v[0])));
                }
            }
            out.push((v[0], Vec::new()));
            continue;
        }
        let pose = parse_pose_fields(&lines, &fields)?;
        let Some((_, batch)) = out.last_mut() else {
            return Err(lines.error("pose before the first 'batch' line"));
        };
        if let Some(prev) = batch.last() {
            if !(pose.time > prev.time) {
                return Err(lines.error(format!("time {} does not follow {}", pose.time, prev.time)));
            }
        }
        batch.push(pose);
    }
    Ok(out)
}

pub fn write_corrections<W: Write>(mut w: W, batches: &[(f64, Vec<TimedPose<f64>>)]) -> io::Result<()> {
    writeln!(w, "# batch <time>, then time tx ty tz qw qx qy qz per pose")?;
    let mut buf = String::new();
    for (t, poses) in batches {
        let _ = writeln!(buf, "batch {t}");
        for p in poses {
            write_pose_line(&mut buf, p);
        }
    }
    w.write_all(buf.as_bytes())
}

pub fn read_queries<R: BufRead>(file: &str, reader: R) -> Result<QuerySteps, LogError> {
    let mut lines = Lines::new(file, reader);
    let mut out: QuerySteps = Vec::new();
    while let Some(fields) = lines.next_fields()? {
        let v = lines.floats(&fields, 10, "query (time mx my mz c00 c01 c02 c11 c12 c22)")?;
        let cov = Matrix3::new(v[4], v[5], v[6], v[5], v[7], v[8], v[6], v[8], v[9]);
        let q = GaussianPoint::new(Vector3::new(v[1], v[2], v[3]), cov).map_err(|e| lines.error(e.to_string()))?;
        match out.last_mut() {
            Some((t, step)) if *t == v[0] => step.push(q),
            Some((t, _)) if v[0] < *t => return Err(lines.error(format!("time {} precedes {t}", v[0]))),
            _ => out.push((v[0], vec![q])),
        }
    }
    Ok(out)
}

pub fn write_queries<W: Write>(mut w: W, steps: &[(f64, Vec<GaussianPoint<f64>>)]) -> io::Result<()> {
    writeln!(w, "# time mx my mz c00 c01 c02 c11 c12 c22")?;
    let mut buf = String::new();
    for (t, qs) in steps {
        for q in qs {
            let (m, c) = (q.mean(), q.covariance());
            let _ = writeln!(buf, "{t} {} {} {} {} {} {} {} {} {}", m.x, m.y, m.z, c[(0, 0)], c[(0, 1)], c[(0, 2)], c[(1, 1)], c[(1, 2)], c[(2, 2)]);
        }
    }
    w.write_all(buf.as_bytes())
}

/// Validity bits, pixel `i` in bit `i % 8` of byte `i / 8`.
fn encode_mask(valid: &[bool]) -> String {
    let mut bytes = vec![0u8; valid.len().div_ceil(8)];
    for (i, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
        bytes[i / 8] |= 1 << (i % 8);
    }
    hex::encode(bytes)
}

fn decode_mask(text: &str, n: usize) -> Result<Vec<bool>, String> {
    let bytes = hex::decode(text).map_err(|e| format!("bad mask: {e}"))?;
    if bytes.len() != n.div_ceil(8) {
        return Err(format!("mask holds {} bytes, expected {}", bytes.len(), n.div_ceil(8)));
    }
    if !n.is_multiple_of(8) && bytes[n / 8] >> (n % 8) != 0 {
        return Err("mask sets bits past the last pixel".into());
    }
    Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

/// Reads a cloud log: per frame a header
/// `frame <time> <rows> <cols> <k00> .. <k22> <min_range> <max_range>`,
/// a `mask <hex>` line, then one line per image row holding `3 * cols`
/// coordinates. Invalid pixels are written as `0 0 0`.
pub fn read_clouds<R: BufRead>(file: &str, reader: R) -> Result<CloudLog, LogError> {
    let mut lines = Lines::new(file, reader);
    let mut log = CloudLog {
        camera: None,
        clouds: Vec::new(),
    };
    while let Some(fields) = lines.next_fields()? {
        if fields[0] != "frame" {
            return Err(lines.error(format!("expected a 'frame' header, found '{}'", fields[0])));
        }
        if fields.len() != 15 {
            return Err(lines.error(format!("frame header: expected 15 fields, found {}", fields.len())));
        }
        let time = lines.float(&fields[1])?;
        let rows = lines.usize(&fields[2])?;
        let cols = lines.usize(&fields[3])?;
        let k = lines.floats(&fields[4..13], 9, "intrinsics")?;
        let min_range = lines.float(&fields[13])?;
        let max_range = lines.float(&fields[14])?;
        let camera = CameraModel::new(Matrix3::from_row_slice(&k), rows, cols, min_range, max_range).map_err(|e| lines.error(e.to_string()))?;
        match &log.camera {
            Some(c) if *c != camera => return Err(lines.error("camera differs from the first frame")),
            Some(_) => {}
            None => log.camera = Some(camera),
        }
        if let Some((prev, _)) = log.clouds.last() {
            if !(time > *prev) {
                return Err(lines.error(format!("time {time} does not follow {prev}")));
            }
        }

        let n = rows * cols;
        let mask = match lines.next_fields()? {
            Some(f) if f.len() == 2 && f[0] == "mask" => decode_mask(&f[1], n).map_err(|m| lines.error(m))?,
            Some(_) => return Err(lines.error("expected 'mask <hex>'")),
            None => return Err(lines.error("log ends before the mask line")),
        };
        let mut points = Vec::with_capacity(n);
        for r in 0..rows {
            let Some(f) = lines.next_fields()? else {
                return Err(lines.error(format!("log ends at image row {r} of {rows}")));
            };
            let v = lines.floats(&f, 3 * cols, "image row")?;
            for (c, xyz) in v.chunks_exact(3).enumerate() {
                let p = Vector3::new(xyz[0], xyz[1], xyz[2]);
                if !mask[r * cols + c] && p != Vector3::zeros() {
                    return Err(lines.error(format!("pixel {c} is masked invalid but not 0 0 0")));
                }
                points.push(p);
            }
        }
        let cloud = PointCloud::new(rows, cols, points, mask).map_err(|e| lines.error(e.to_string()))?;
        log.clouds.push((time, Arc::new(cloud)));
    }
    Ok(log)
}

pub fn write_clouds<W: Write>(mut w: W, camera: &CameraModel<f64>, clouds: &[(f64, Arc<PointCloud<f64>>)]) -> io::Result<()> {
    writeln!(w, "# frame time rows cols k00 k01 k02 k10 k11 k12 k20 k21 k22 min_range max_range")?;
    writeln!(w, "# mask <hex validity bits>, then one line of x y z triples per image row")?;
    let k = camera.intrinsics();
    let mut header = String::new();
    for r in 0..3 {
        for c in 0..3 {
            let _ = write!(header, " {}", k[(r, c)]);
        }
    }
    let mut buf = String::new();
    for (t, cloud) in clouds {
        buf.clear();
        let _ = writeln!(buf, "frame {t} {} {}{header} {} {}", camera.rows(), camera.cols(), camera.min_range(), camera.max_range());
        let _ = writeln!(buf, "mask {}", encode_mask(cloud.validity()));
        for row in cloud.points().chunks(cloud.cols().max(1)) {
            let mut first = true;
            for p in row {
                for v in [p.x, p.y, p.z] {
                    if !first {
                        buf.push(' ');
                    }
                    first = false;
                    let _ = write!(buf, "{v}");
                }
            }
            buf.push('\n');
        }
        w.write_all(buf.as_bytes())?;
    }
    Ok(())
}
