//! On-disk formats.
//!
//! Both formats are a text header followed by raw little-endian `f64`s, so a
//! save/load round trip is bit-exact.
//!
//! Dataset (`.momo-data`): one line `momo-data <version> <json header>`, then
//! one fixed-width record per transition: `s, a, r, s', terminal (0 or 1)`.
//!
//! Checkpoint: a line `momo-checkpoint <version>`, a one-line JSON manifest
//! naming every network, its architecture and its parameter blocks with byte
//! offsets, then the parameters of all networks in manifest order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use momo_core::agent::{AgentConfig, AgentNets, Td3Agent};
use momo_core::dynamics::DynamicsModel;
use momo_core::envtoy::{DatasetMeta, OfflineDataset, PointMassConfig, Transition};
use momo_core::morse::{MorseKernel, MorseNetwork};
use momo_core::nn::{DenseNet, NetSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATA_MAGIC: &str = "momo-data";
pub const DATA_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &str = "momo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported file header {found:?} (expected `{expected}`)")]
    VersionMismatch { expected: String, found: String },
    #[error("file truncated: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("checkpoint holds a {found} model, not a {expected} model")]
    KindMismatch { expected: &'static str, found: String },
    #[error(transparent)]
    Core(#[from] momo_core::Error),
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

fn read_header_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() == Some(&b'\n') {
        line.pop();
    }
    String::from_utf8(line).map_err(|_| FormatError::Header("header is not UTF-8".into()))
}

fn check_magic<'a>(line: &'a str, magic: &str, version: u32) -> Result<&'a str> {
    let expected = format!("{magic} {version}");
    let mismatch = || FormatError::VersionMismatch {
        expected: expected.clone(),
        found: line.chars().take(40).collect(),
    };
    let rest = line.strip_prefix(magic).ok_or_else(mismatch)?;
    let rest = rest.strip_prefix(' ').ok_or_else(mismatch)?;
    let (v, tail) = rest.split_once(' ').unwrap_or((rest, ""));
    if v.parse::<u32>().ok() != Some(version) {
        return Err(mismatch());
    }
    Ok(tail)
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DataHeader {
    state_dim: usize,
    action_dim: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    count: usize,
    meta: DatasetMeta,
}

pub fn write_dataset<W: Write>(w: &mut W, data: &OfflineDataset) -> Result<()> {
    let header = DataHeader {
        state_dim: data.state_dim(),
        action_dim: data.action_dim(),
        action_low: data.action_low().to_vec(),
        action_high: data.action_high().to_vec(),
        count: data.len(),
        meta: data.meta.clone(),
    };
    let json = serde_json::to_string(&header).map_err(|e| FormatError::Header(e.to_string()))?;
    writeln!(w, "{DATA_MAGIC} {DATA_VERSION} {json}")?;
    for t in data.transitions() {
        write_f64s(w, &t.state)?;
        write_f64s(w, &t.action)?;
        write_f64s(w, &[t.reward])?;
        write_f64s(w, &t.next_state)?;
        write_f64s(w, &[if t.terminal { 1.0 } else { 0.0 }])?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<OfflineDataset> {
    let mut r = BufReader::new(r);
    let line = read_header_line(&mut r)?;
    let json = check_magic(&line, DATA_MAGIC, DATA_VERSION)?;
    let h: DataHeader = serde_json::from_str(json).map_err(|e| FormatError::Header(e.to_string()))?;
    if h.action_low.len() != h.action_dim || h.action_high.len() != h.action_dim {
        return Err(FormatError::Dimension(format!(
            "action bounds have lengths {}/{} for action dim {}",
            h.action_low.len(),
            h.action_high.len(),
            h.action_dim
        )));
    }
    if h.meta.size != h.count {
        return Err(FormatError::Dimension(format!(
            "metadata size {} disagrees with record count {}",
            h.meta.size, h.count
        )));
    }
    let (sd, ad) = (h.state_dim, h.action_dim);
    let width = 2 * sd + ad + 2;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = h.count * width * 8;
    if payload.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(FormatError::Dimension(format!(
            "{} trailing bytes after {} records of width {width}",
            payload.len() - expected,
            h.count
        )));
    }
    let mut data = OfflineDataset::new(sd, ad, h.action_low, h.action_high)?;
    for rec in read_f64s(&payload).chunks_exact(width) {
        let terminal = match rec[width - 1] {
            t if t == 0.0 => false,
            t if t == 1.0 => true,
            t => return Err(FormatError::Dimension(format!("terminal flag {t} is not 0 or 1"))),
        };
        data.push(Transition {
            state: rec[..sd].to_vec(),
            action: rec[sd..sd + ad].to_vec(),
            reward: rec[sd + ad],
            next_state: rec[sd + ad + 1..2 * sd + ad + 1].to_vec(),
            terminal,
        })?;
    }
    data.meta = h.meta;
    Ok(data)
}

pub fn save_dataset(path: &Path, data: &OfflineDataset) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_dataset(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    read_dataset(fs::File::open(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the parameter payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetEntry {
    pub name: String,
    pub spec: NetSpec,
    pub blocks: Vec<BlockEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseSection {
    pub state_dim: usize,
    pub action_dim: usize,
    pub lambda: f64,
    pub embed_dim: usize,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSection {
    pub state_dim: usize,
    pub action_dim: usize,
    pub log_std_low: f64,
    pub log_std_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSection {
    pub config: AgentConfig,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Environment the agent is evaluated in.
    pub env: PointMassConfig,
    /// Seed of the training run; evaluation episodes derive from it.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub nets: Vec<NetEntry>,
    pub payload_bytes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub morse: Option<MorseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentSection>,
}

impl Manifest {
    fn new(kind: &str, nets: &[(&str, &DenseNet)]) -> Self {
        let mut base = 0;
        let entries = nets
            .iter()
            .map(|(name, net)| {
                let blocks = net
                    .blocks()
                    .into_iter()
                    .map(|b| BlockEntry {
                        name: b.name,
                        shape: b.shape,
                        offset: base + 8 * b.offset,
                    })
                    .collect();
                base += 8 * net.param_count();
                NetEntry {
                    name: name.to_string(),
                    spec: net.spec().clone(),
                    blocks,
                }
            })
            .collect();
        Manifest {
            format_version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            nets: entries,
            payload_bytes: base,
            morse: None,
            dynamics: None,
            agent: None,
        }
    }
}

/// A loaded checkpoint: the manifest plus networks by name.
pub struct Checkpoint {
    pub manifest: Manifest,
    pub nets: Vec<(String, DenseNet)>,
}

impl Checkpoint {
    fn expect_kind(&self, kind: &'static str) -> Result<()> {
        if self.manifest.kind == kind {
            Ok(())
        } else {
            Err(FormatError::KindMismatch {
                expected: kind,
                found: self.manifest.kind.clone(),
            })
        }
    }

    fn take(&mut self, name: &str) -> Result<DenseNet> {
        let i = self
            .nets
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| FormatError::Header(format!("checkpoint lacks network `{name}`")))?;
        Ok(self.nets.remove(i).1)
    }

    fn section<T: Clone>(&self, s: &Option<T>, name: &str) -> Result<T> {
        s.clone().ok_or_else(|| FormatError::Header(format!("checkpoint lacks the `{name}` section")))
    }
}

fn write_checkpoint<W: Write>(w: &mut W, manifest: &Manifest, nets: &[&DenseNet]) -> Result<()> {
    let json = serde_json::to_string(manifest).map_err(|e| FormatError::Header(e.to_string()))?;
    writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    writeln!(w, "{json}")?;
    for net in nets {
        write_f64s(w, net.params())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint> {
    let mut r = BufReader::new(r);
    let line = read_header_line(&mut r)?;
    let tail = check_magic(&line, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    if !tail.is_empty() {
        return Err(FormatError::Header("unexpected text after the checkpoint magic".into()));
    }
    let json = read_header_line(&mut r)?;
    let manifest: Manifest = serde_json::from_str(&json).map_err(|e| FormatError::Header(e.to_string()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() < manifest.payload_bytes {
        return Err(FormatError::Truncated {
            expected: manifest.payload_bytes,
            found: payload.len(),
        });
    }
    let mut nets = Vec::new();
    let mut offset = 0;
    for entry in &manifest.nets {
        let n = entry.spec.param_count();
        let end = offset + 8 * n;
        if end > manifest.payload_bytes {
            return Err(FormatError::Dimension(format!(
                "network `{}` overruns the declared payload",
                entry.name
            )));
        }
        let net = DenseNet::from_params(entry.spec.clone(), read_f64s(&payload[offset..end]))?;
        let declared: Vec<(String, Vec<usize>, usize)> =
            entry.blocks.iter().map(|b| (b.name.clone(), b.shape.clone(), b.offset)).collect();
        let actual: Vec<(String, Vec<usize>, usize)> =
            net.blocks().into_iter().map(|b| (b.name, b.shape, offset + 8 * b.offset)).collect();
        if declared != actual {
            return Err(FormatError::Dimension(format!(
                "parameter blocks of `{}` do not match its architecture",
                entry.name
            )));
        }
        nets.push((entry.name.clone(), net));
        offset = end;
    }
    if offset != manifest.payload_bytes || payload.len() != offset {
        return Err(FormatError::Dimension(format!(
            "payload holds {} bytes, networks need {offset}, manifest declares {}",
            payload.len(),
            manifest.payload_bytes
        )));
    }
    Ok(Checkpoint { manifest, nets })
}

fn save_with(path: &Path, manifest: &Manifest, nets: &[&DenseNet]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_checkpoint(&mut w, manifest, nets)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(fs::File::open(path)?)
}

pub fn save_morse(path: &Path, m: &MorseNetwork) -> Result<()> {
    let mut manifest = Manifest::new("morse", &[("embed", m.embedding_net())]);
    manifest.morse = Some(MorseSection {
        state_dim: m.state_dim(),
        action_dim: m.action_dim(),
        lambda: m.kernel().scale(),
        embed_dim: m.embed_dim(),
        target: m.target().to_vec(),
    });
    save_with(path, &manifest, &[m.embedding_net()])
}

pub fn morse_from_checkpoint(mut ck: Checkpoint) -> Result<MorseNetwork> {
    ck.expect_kind("morse")?;
    let s = ck.section(&ck.manifest.morse, "morse")?;
    if s.target.len() != s.embed_dim {
        return Err(FormatError::Dimension("target length differs from embed_dim".into()));
    }
    let net = ck.take("embed")?;
    Ok(MorseNetwork::from_parts(
        net,
        MorseKernel::new(s.lambda)?,
        s.target,
        s.state_dim,
        s.action_dim,
    )?)
}

pub fn load_morse(path: &Path) -> Result<MorseNetwork> {
    morse_from_checkpoint(load_checkpoint(path)?)
}

pub fn save_dynamics(path: &Path, m: &DynamicsModel) -> Result<()> {
    let mut manifest = Manifest::new("dynamics", &[("body", m.body())]);
    let (low, high) = m.clamp_bounds();
    manifest.dynamics = Some(DynamicsSection {
        state_dim: m.state_dim(),
        action_dim: m.action_dim(),
        log_std_low: low,
        log_std_high: high,
    });
    save_with(path, &manifest, &[m.body()])
}

pub fn load_dynamics(path: &Path) -> Result<DynamicsModel> {
    let mut ck = load_checkpoint(path)?;
    ck.expect_kind("dynamics")?;
    let s = ck.section(&ck.manifest.dynamics, "dynamics")?;
    let body = ck.take("body")?;
    Ok(DynamicsModel::from_parts(body, s.log_std_low, s.log_std_high, s.state_dim, s.action_dim)?)
}

pub struct LoadedAgent {
    pub agent: Td3Agent,
    pub env: PointMassConfig,
    /// Seed of the training run.
    pub seed: u64,
}

const AGENT_NETS: [&str; 6] = ["actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target"];

/// Saves networks and configuration; optimizer moments are not persisted,
/// so a loaded agent evaluates identically but restarts Adam from scratch.
pub fn save_agent(path: &Path, agent: &Td3Agent, env: &PointMassConfig, seed: u64) -> Result<()> {
    let (on, tg) = (agent.online(), agent.targets());
    let nets = [&on.actor, &on.critic1, &on.critic2, &tg.actor, &tg.critic1, &tg.critic2];
    let named: Vec<(&str, &DenseNet)> = AGENT_NETS.iter().copied().zip(nets.iter().copied()).collect();
    let mut manifest = Manifest::new("agent", &named);
    let (low, high) = agent.action_bounds();
    manifest.agent = Some(AgentSection {
        config: agent.config().clone(),
        action_low: low.to_vec(),
        action_high: high.to_vec(),
        env: env.clone(),
        seed,
    });
    save_with(path, &manifest, &nets)
}

pub fn load_agent(path: &Path) -> Result<LoadedAgent> {
    let mut ck = load_checkpoint(path)?;
    ck.expect_kind("agent")?;
    let s = ck.section(&ck.manifest.agent, "agent")?;
    let online = AgentNets {
        actor: ck.take("actor")?,
        critic1: ck.take("critic1")?,
        critic2: ck.take("critic2")?,
    };
    let target = AgentNets {
        actor: ck.take("actor_target")?,
        critic1: ck.take("critic1_target")?,
        critic2: ck.take("critic2_target")?,
    };
    let agent = Td3Agent::from_parts(s.config, online, target, s.action_low, s.action_high)?;
    Ok(LoadedAgent {
        agent,
        env: s.env,
        seed: s.seed,
    })
}
