//! On-disk formats: scans, query sets, checkpoints, PLY exports and manifests.
//!
//! All binary payloads are little-endian. Query sets and checkpoints end with
//! a SHA-256 of everything before it, verified before anything is decoded.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use visocc_core::queries::QueryMeta;
use visocc_core::{CoreError, OffsetMode, PointCloud, QueryKind, QuerySet, Vec3};
use visocc_model::{Head, Model, ModelConfig, SupportMode};
use visocc_nn::{AdamWConfig, AdamWState, LinearLayer, Tensor2};
use visocc_train::{Scan, Snapshot};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("empty scan")]
    EmptyScan,
    #[error("truncated record: payload of {len} bytes is not a multiple of {record}")]
    Truncated { len: usize, record: usize },
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("version mismatch: file has version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("shape mismatch for {name}: file has {found:?}, model expects {expected:?}")]
    Shape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checksum mismatch")]
    Checksum,
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

fn malformed(what: &'static str, detail: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        what,
        detail: detail.into(),
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| FormatError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Sequential little-endian reader over a byte slice.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            what,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(malformed(
                self.what,
                format!("unexpected end of data at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| malformed(self.what, "tensor too large"))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| malformed(self.what, "invalid UTF-8"))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(malformed(
                self.what,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn with_checksum(mut body: Vec<u8>) -> Vec<u8> {
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    body
}

/// The payload without its trailing digest, once the digest has been checked.
fn verify_checksum<'a>(bytes: &'a [u8], what: &'static str) -> Result<&'a [u8]> {
    if bytes.len() < 32 {
        return Err(malformed(what, "shorter than its checksum"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(FormatError::Checksum);
    }
    Ok(body)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// ---------------------------------------------------------------------------
// Scans

pub const SCAN_RECORD: usize = 16;
const SCAN_HEADER_TAG: &str = "visocc-scan 1";

/// `(x, y, z, intensity)` records as 32-bit floats; intensity 0 when absent.
pub fn encode_scan_payload(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * SCAN_RECORD);
    for (i, p) in cloud.points().iter().enumerate() {
        for v in [p.x, p.y, p.z, cloud.intensity_or_zero(i)] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn encode_labels(labels: &[u32]) -> Vec<u8> {
    labels.iter().flat_map(|l| l.to_le_bytes()).collect()
}

/// Sidecar header of a scan file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanHeader {
    pub index: u64,
    pub points: usize,
    pub sensor_origin: Vec3,
    pub intensity: bool,
    pub labels: bool,
}

impl ScanHeader {
    pub fn of(scan: &Scan) -> Self {
        Self {
            index: scan.index,
            points: scan.cloud.len(),
            sensor_origin: scan.cloud.sensor_origin(),
            intensity: scan.cloud.intensities().is_some(),
            labels: scan.cloud.labels().is_some(),
        }
    }

    pub fn render(&self) -> String {
        let o = self.sensor_origin;
        let flag = |b: bool| if b { "present" } else { "absent" };
        format!(
            "{SCAN_HEADER_TAG}\nindex = {}\npoints = {}\nsensor_origin = {} {} {}\nintensity = {}\nlabels = {}\n",
            self.index,
            self.points,
            o.x as f32,
            o.y as f32,
            o.z as f32,
            flag(self.intensity),
            flag(self.labels)
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(SCAN_HEADER_TAG) {
            return Err(malformed("scan header", "missing tag line"));
        }
        let mut fields = std::collections::BTreeMap::new();
        for line in lines.map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| malformed("scan header", format!("bad line '{line}'")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| malformed("scan header", format!("missing '{k}'")))
        };
        let num = |k: &str| {
            get(k)?
                .parse::<u64>()
                .map_err(|_| malformed("scan header", format!("bad '{k}'")))
        };
        let flag = |k: &str| match get(k)?.as_str() {
            "present" => Ok(true),
            "absent" => Ok(false),
            other => Err(malformed(
                "scan header",
                format!("bad '{k}' value '{other}'"),
            )),
        };
        let origin: Vec<f32> = get("sensor_origin")?
            .split_whitespace()
            .map(|v| {
                v.parse::<f32>()
                    .map_err(|_| malformed("scan header", "bad sensor_origin"))
            })
            .collect::<Result<_>>()?;
        if origin.len() != 3 {
            return Err(malformed("scan header", "sensor_origin needs three values"));
        }
        Ok(Self {
            index: num("index")?,
            points: num("points")? as usize,
            sensor_origin: Vec3::new(origin[0].into(), origin[1].into(), origin[2].into()),
            intensity: flag("intensity")?,
            labels: flag("labels")?,
        })
    }
}

/// Cloud from a payload, its header and (if the header says so) the labels file.
pub fn decode_scan(payload: &[u8], header: &ScanHeader, labels: Option<&[u8]>) -> Result<Scan> {
    if payload.is_empty() {
        return Err(FormatError::EmptyScan);
    }
    if payload.len() % SCAN_RECORD != 0 {
        return Err(FormatError::Truncated {
            len: payload.len(),
            record: SCAN_RECORD,
        });
    }
    let n = payload.len() / SCAN_RECORD;
    if n != header.points {
        return Err(malformed(
            "scan",
            format!("header lists {} points, payload has {n}", header.points),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let points = values
        .chunks_exact(4)
        .map(|r| Vec3::new(r[0], r[1], r[2]))
        .collect();
    let intensities = header
        .intensity
        .then(|| values.chunks_exact(4).map(|r| r[3]).collect());
    let labels = match (header.labels, labels) {
        (false, _) => None,
        (true, None) => {
            return Err(malformed(
                "scan",
                "header lists labels but no labels file was given",
            ))
        }
        (true, Some(raw)) => {
            if raw.len() != 4 * n {
                return Err(FormatError::Truncated {
                    len: raw.len(),
                    record: 4,
                });
            }
            Some(
                raw.chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
    };
    let cloud = PointCloud::new(header.sensor_origin, points, intensities, labels)?;
    Ok(Scan {
        index: header.index,
        cloud,
    })
}

pub fn scan_stem(index: u64) -> String {
    format!("scene_{index:07}")
}

/// Writes `<stem>.bin`, `<stem>.hdr` and, with labels, `<stem>.labels`.
pub fn write_scan(dir: &Path, scan: &Scan) -> Result<PathBuf> {
    let stem = scan_stem(scan.index);
    let bin = dir.join(format!("{stem}.bin"));
    write_file(&bin, &encode_scan_payload(&scan.cloud))?;
    write_file(
        &dir.join(format!("{stem}.hdr")),
        ScanHeader::of(scan).render().as_bytes(),
    )?;
    if let Some(labels) = scan.cloud.labels() {
        write_file(&dir.join(format!("{stem}.labels")), &encode_labels(labels))?;
    }
    Ok(bin)
}

/// Reads a scan from its `.bin` path and the sidecars next to it.
pub fn read_scan(bin: &Path) -> Result<Scan> {
    let header_bytes = read_file(&bin.with_extension("hdr"))?;
    let header = ScanHeader::parse(&String::from_utf8_lossy(&header_bytes))?;
    let labels = if header.labels {
        Some(read_file(&bin.with_extension("labels"))?)
    } else {
        None
    };
    decode_scan(&read_file(bin)?, &header, labels.as_deref())
}

/// Every `*.bin` scan in `dir`, sorted by file name.
pub fn read_scan_dir(dir: &Path) -> Result<Vec<Scan>> {
    list_with_extension(dir, "bin")?
        .iter()
        .map(|p| read_scan(p))
        .collect()
}

pub fn list_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| FormatError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    paths.sort();
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Query sets

const QUERY_MAGIC: &[u8; 4] = b"VSQS";
const QUERY_VERSION: u32 = 1;
pub const QUERY_RECORD: usize = 22;

pub fn encode_queries(qs: &QuerySet) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + qs.len() * QUERY_RECORD);
    out.extend_from_slice(QUERY_MAGIC);
    out.extend_from_slice(&QUERY_VERSION.to_le_bytes());
    out.extend_from_slice(&(qs.len() as u64).to_le_bytes());
    out.extend_from_slice(&qs.meta.delta.to_le_bytes());
    out.push(match qs.meta.mode {
        OffsetMode::Fixed => 0,
        OffsetMode::Uniform => 1,
    });
    out.extend_from_slice(&qs.meta.seed.to_le_bytes());
    for i in 0..qs.len() {
        let p = qs.positions[i];
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.push(u8::from(qs.occupancy[i]));
        out.extend_from_slice(
            &qs.intensity_target[i]
                .map_or(-1.0f32, |v| v as f32)
                .to_le_bytes(),
        );
        out.push(qs.kind[i].code());
        out.extend_from_slice(&(qs.source_index[i] as u32).to_le_bytes());
    }
    with_checksum(out)
}

pub fn decode_queries(bytes: &[u8]) -> Result<QuerySet> {
    let body = verify_checksum(bytes, "query set")?;
    let mut r = Reader::new(body, "query set");
    if &r.array::<4>()? != QUERY_MAGIC {
        return Err(malformed("query set", "bad magic"));
    }
    let version = r.u32()?;
    if version != QUERY_VERSION {
        return Err(FormatError::Version {
            found: version,
            expected: QUERY_VERSION,
        });
    }
    let count = r.u64()? as usize;
    let delta = r.f64()?;
    let mode = match r.u8()? {
        0 => OffsetMode::Fixed,
        1 => OffsetMode::Uniform,
        m => return Err(malformed("query set", format!("unknown offset mode {m}"))),
    };
    let seed = r.u64()?;
    if (body.len() - r.pos) != count.saturating_mul(QUERY_RECORD) {
        return Err(FormatError::Truncated {
            len: body.len() - r.pos,
            record: QUERY_RECORD,
        });
    }
    let mut qs = QuerySet::empty(QueryMeta { delta, mode, seed });
    for _ in 0..count {
        let (x, y, z) = (r.f32()?, r.f32()?, r.f32()?);
        let occupied = match r.u8()? {
            0 => false,
            1 => true,
            o => return Err(malformed("query set", format!("occupancy byte {o}"))),
        };
        let intensity = r.f32()?;
        let kind = QueryKind::from_code(r.u8()?)
            .ok_or_else(|| malformed("query set", "unknown query kind"))?;
        let source = r.u32()? as usize;
        qs.positions.push(Vec3::new(x.into(), y.into(), z.into()));
        qs.occupancy.push(occupied);
        qs.intensity_target
            .push((intensity >= 0.0).then_some(f64::from(intensity)));
        qs.kind.push(kind);
        qs.source_index.push(source);
    }
    r.finish()?;
    qs.validate()?;
    Ok(qs)
}

// ---------------------------------------------------------------------------
// Checkpoints

const CHECKPOINT_MAGIC: &[u8; 4] = b"VSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Architecture keys stored in a checkpoint; a model can only be loaded
/// under the same keys.
pub fn architecture_keys(config: &ModelConfig) -> String {
    let support = match config.support {
        SupportMode::Points => "points".to_string(),
        SupportMode::Bev { pitch } => format!("bev:{pitch}"),
    };
    format!(
        "feature_dim={}\nlatent_dim={}\nk={}\nradius={}\nhead={}\nsupport={}\nuse_intensity={}\n",
        visocc_model::encoder::FEATURE_DIM,
        visocc_model::LATENT_DIM,
        config.k,
        config.radius,
        config.head.name(),
        support,
        config.use_intensity
    )
}

fn parse_architecture(text: &str) -> Result<ModelConfig> {
    let bad = |d: String| malformed("checkpoint architecture", d);
    let mut c = ModelConfig::default();
    let mut seen = 0;
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("bad line '{line}'")))?;
        let parse_err = || bad(format!("bad value for {k}: '{v}'"));
        match k {
            "feature_dim" | "latent_dim" => {
                let expected = if k == "feature_dim" {
                    visocc_model::encoder::FEATURE_DIM
                } else {
                    visocc_model::LATENT_DIM
                };
                if v.parse::<usize>().map_err(|_| parse_err())? != expected {
                    return Err(FormatError::Architecture(format!(
                        "{k} is {v}, this build uses {expected}"
                    )));
                }
            }
            "k" => c.k = v.parse().map_err(|_| parse_err())?,
            "radius" => c.radius = v.parse().map_err(|_| parse_err())?,
            "head" => c.head = Head::parse(v).ok_or_else(parse_err)?,
            "support" => {
                c.support = match v.strip_prefix("bev:") {
                    Some(p) => SupportMode::Bev {
                        pitch: p.parse().map_err(|_| parse_err())?,
                    },
                    None if v == "points" => SupportMode::Points,
                    None => return Err(parse_err()),
                }
            }
            "use_intensity" => c.use_intensity = v.parse().map_err(|_| parse_err())?,
            _ => return Err(bad(format!("unknown key '{k}'"))),
        }
        seen += 1;
    }
    if seen != 7 {
        return Err(bad(format!("expected 7 keys, found {seen}")));
    }
    Ok(c)
}

fn tensor_names() -> Vec<String> {
    let mut layers: Vec<String> = (0..3).map(|i| format!("encoder.point_mlp.{i}")).collect();
    layers.extend((0..2).map(|i| format!("encoder.post_mlp.{i}")));
    layers.extend((0..4).map(|i| format!("decoder.{i}")));
    layers
        .iter()
        .flat_map(|l| [format!("{l}.weight"), format!("{l}.bias")])
        .collect()
}

fn layer_tensors(layer: &LinearLayer<f32>) -> [(Vec<usize>, &[f32]); 2] {
    [
        (
            vec![layer.weight.rows(), layer.weight.cols()],
            layer.weight.data(),
        ),
        (vec![layer.bias.len()], &layer.bias),
    ]
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_tensor(r: &mut Reader) -> Result<(String, Vec<usize>, Vec<f32>)> {
    let len = r.u16()? as usize;
    let name = r.text(len)?.to_string();
    let rank = r.u8()? as usize;
    let dims: Vec<usize> = (0..rank)
        .map(|_| r.u64().map(|d| d as usize))
        .collect::<Result<_>>()?;
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| malformed("checkpoint", "tensor too large"))?;
    Ok((name, dims, r.f32s(n)?))
}

/// Parameters (named tensors with shapes) and optimizer state.
pub fn encode_checkpoint(model: &Model<f32>, optimizer: &AdamWState<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let arch = architecture_keys(&model.config);
    out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    out.extend_from_slice(arch.as_bytes());
    let names = tensor_names();
    let tensors: Vec<(Vec<usize>, &[f32])> = model.layers().flat_map(layer_tensors).collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, (dims, data)) in names.iter().zip(&tensors) {
        put_tensor(&mut out, name, dims, data);
    }
    let c = optimizer.config;
    for v in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&optimizer.step.to_le_bytes());
    out.extend_from_slice(&(optimizer.m.len() as u32).to_le_bytes());
    for (i, (m, v)) in optimizer.m.iter().zip(&optimizer.v).enumerate() {
        put_tensor(&mut out, &format!("adam.m.{}", names[i]), &[m.len()], m);
        put_tensor(&mut out, &format!("adam.v.{}", names[i]), &[v.len()], v);
    }
    with_checksum(out)
}

/// Decodes a checkpoint; nothing is returned unless the whole file checks out.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Snapshot> {
    let body = verify_checksum(bytes, "checkpoint")?;
    let mut r = Reader::new(body, "checkpoint");
    if &r.array::<4>()? != CHECKPOINT_MAGIC {
        return Err(malformed("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let arch_len = r.u32()? as usize;
    let config = parse_architecture(r.text(arch_len)?)?;
    let mut model = Model::<f32>::init(config, 0);
    let names = tensor_names();
    let count = r.u32()? as usize;
    if count != names.len() {
        return Err(malformed(
            "checkpoint",
            format!("{count} tensors, expected {}", names.len()),
        ));
    }
    let mut layers: Vec<&mut LinearLayer<f32>> = model.layers_mut().collect();
    for (t, expected_name) in names.iter().enumerate() {
        let (name, dims, data) = get_tensor(&mut r)?;
        if &name != expected_name {
            return Err(malformed(
                "checkpoint",
                format!("tensor '{name}' where '{expected_name}' was expected"),
            ));
        }
        let layer = &mut layers[t / 2];
        if t % 2 == 0 {
            let expected = vec![layer.weight.rows(), layer.weight.cols()];
            if dims != expected {
                return Err(FormatError::Shape {
                    name,
                    found: dims,
                    expected,
                });
            }
            layer.weight = Tensor2::from_vec(dims[0], dims[1], data).expect("shape checked");
        } else {
            let expected = vec![layer.bias.len()];
            if dims != expected {
                return Err(FormatError::Shape {
                    name,
                    found: dims,
                    expected,
                });
            }
            layer.bias = data;
        }
    }
    let config_values: Vec<f64> = (0..5).map(|_| r.f64()).collect::<Result<_>>()?;
    let adam = AdamWConfig {
        lr: config_values[0],
        beta1: config_values[1],
        beta2: config_values[2],
        eps: config_values[3],
        weight_decay: config_values[4],
    };
    let mut optimizer = AdamWState::new(adam);
    optimizer.step = r.u64()?;
    let moments = r.u32()? as usize;
    if moments != 0 && moments != names.len() {
        return Err(malformed(
            "checkpoint",
            format!("{moments} moment pairs, expected 0 or {}", names.len()),
        ));
    }
    let sizes: Vec<usize> = model
        .layers()
        .flat_map(|l| [l.weight.data().len(), l.bias.len()])
        .collect();
    for (i, name) in names.iter().enumerate().take(moments) {
        for (prefix, target) in [("adam.m.", &mut optimizer.m), ("adam.v.", &mut optimizer.v)] {
            let (got, dims, data) = get_tensor(&mut r)?;
            if got != format!("{prefix}{name}") {
                return Err(malformed(
                    "checkpoint",
                    format!("unexpected tensor '{got}'"),
                ));
            }
            if dims != [sizes[i]] {
                return Err(FormatError::Shape {
                    name: got,
                    found: dims,
                    expected: vec![sizes[i]],
                });
            }
            target.push(data);
        }
    }
    r.finish()?;
    Ok(Snapshot { model, optimizer })
}

/// Decodes a checkpoint that must match `expected` architecture keys.
pub fn decode_checkpoint_for(bytes: &[u8], expected: &ModelConfig) -> Result<Snapshot> {
    let snapshot = decode_checkpoint(bytes)?;
    let (found, wanted) = (
        architecture_keys(&snapshot.model.config),
        architecture_keys(expected),
    );
    if found != wanted {
        let diff: Vec<String> = found
            .lines()
            .zip(wanted.lines())
            .filter(|(a, b)| a != b)
            .map(|(a, b)| format!("checkpoint {a} vs configured {b}"))
            .collect();
        return Err(FormatError::Architecture(diff.join(", ")));
    }
    Ok(snapshot)
}

// ---------------------------------------------------------------------------
// PLY export

/// One exported vertex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlyVertex {
    pub position: Vec3,
    pub color: [u8; 3],
    /// Predicted occupancy probability; −1 for scan points.
    pub occupancy: f32,
    /// 0 = scan point, 1 = occupancy sample.
    pub source: u8,
}

pub fn encode_ply(vertices: &[PlyVertex]) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\ncomment visocc occupancy export\n");
    writeln!(out, "element vertex {}", vertices.len()).unwrap();
    for p in ["x", "y", "z"] {
        writeln!(out, "property float {p}").unwrap();
    }
    for p in ["red", "green", "blue"] {
        writeln!(out, "property uchar {p}").unwrap();
    }
    out.push_str("property float occupancy\nproperty uchar source\nend_header\n");
    for v in vertices {
        let p = v.position;
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            p.x as f32,
            p.y as f32,
            p.z as f32,
            v.color[0],
            v.color[1],
            v.color[2],
            v.occupancy,
            v.source
        )
        .unwrap();
    }
    out
}

/// Reads back an ASCII PLY written by [`encode_ply`].
pub fn decode_ply(text: &str) -> Result<Vec<PlyVertex>> {
    let mut lines = text.lines();
    let mut count = None;
    for line in lines.by_ref() {
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(
                n.trim()
                    .parse::<usize>()
                    .map_err(|_| malformed("ply", "bad vertex count"))?,
            );
        }
        if line == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| malformed("ply", "no vertex element"))?;
    let vertices: Vec<PlyVertex> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 8 {
                return Err(malformed(
                    "ply",
                    format!("vertex line with {} fields", f.len()),
                ));
            }
            let num = |i: usize| {
                f[i].parse::<f32>()
                    .map_err(|_| malformed("ply", format!("bad number '{}'", f[i])))
            };
            let byte = |i: usize| {
                f[i].parse::<u8>()
                    .map_err(|_| malformed("ply", format!("bad byte '{}'", f[i])))
            };
            Ok(PlyVertex {
                position: Vec3::new(num(0)?.into(), num(1)?.into(), num(2)?.into()),
                color: [byte(3)?, byte(4)?, byte(5)?],
                occupancy: num(6)?,
                source: byte(7)?,
            })
        })
        .collect::<Result<_>>()?;
    if vertices.len() != count {
        return Err(malformed(
            "ply",
            format!("header lists {count} vertices, found {}", vertices.len()),
        ));
    }
    Ok(vertices)
}

// ---------------------------------------------------------------------------
// Manifests

pub const MANIFEST: &str = "manifest.txt";

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|source| FormatError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for e in entries {
        let path = e
            .map_err(|source| FormatError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path
            .strip_prefix(root)
            .map_or(true, |p| p != Path::new(MANIFEST))
        {
            out.push(path);
        }
    }
    Ok(())
}

/// `sha256sum`-style listing of every file under `dir` except the manifest itself.
pub fn manifest(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut rows: Vec<(String, String)> = files
        .iter()
        .map(|p| {
            let rel = p
                .strip_prefix(dir)
                .expect("under dir")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            Ok((rel, sha256_hex(&read_file(p)?)))
        })
        .collect::<Result<_>>()?;
    rows.sort();
    Ok(rows.iter().map(|(p, h)| format!("{h}  {p}\n")).collect())
}

pub fn write_manifest(dir: &Path) -> Result<PathBuf> {
    let path = dir.join(MANIFEST);
    write_file(&path, manifest(dir)?.as_bytes())?;
    Ok(path)
}
