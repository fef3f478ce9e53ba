//! Binary checkpoint of an [`EngineState`].
//!
//! Layout: magic `IGCK`, u32 version, u32 section count, then one table row
//! per section (4-byte tag, u64 offset, u64 length) and the section payloads.
//! Sections: `META`, `PROJ` (matrix record), `SUPP` (support record, empty
//! payload for an empty set), `RPLY`, `REGI`, `RNGS`. Little-endian
//! throughout. The projector is stored in single precision.

use std::fs;
use std::path::Path;

use super::{EngineState, ReplayBuffer, ReplayEntry};
use crate::error::{Error, Result};
use crate::ingest::{decode_binary, encode_binary, Reader, VERSION_MATRIX};
use crate::losses::Projector;
use crate::registry::{CategoryId, CategoryInfo, CategoryRegistry, Provenance};
use crate::rng::RngState;
use crate::snn::SupportSet;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IGCK";
const VERSION: u32 = 1;
const TAGS: [&[u8; 4]; 6] = [b"META", b"PROJ", b"SUPP", b"RPLY", b"REGI", b"RNGS"];

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn meta(state: &EngineState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&state.stage.map_or(0u64, |s| s as u64 + 1).to_le_bytes());
    put_u32(&mut out, state.support.d() as u32);
    put_u32(&mut out, state.support.budget() as u32);
    put_u32(&mut out, state.replay.budget() as u32);
    out
}

fn replay(buf: &ReplayBuffer, d: usize) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, buf.len() as u32);
    put_u32(&mut out, d as u32);
    for e in buf.entries() {
        e.embedding.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        put_u32(&mut out, e.category.0);
        put_u32(&mut out, e.stage as u32);
    }
    out
}

fn registry(reg: &CategoryRegistry) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, reg.len() as u32);
    for (_, info) in reg.iter() {
        put_u32(&mut out, info.stage as u32);
        out.push(match info.provenance {
            Provenance::Labeled => 0,
            Provenance::Discovered => 1,
        });
        out.push(info.link.is_some() as u8);
        put_u32(&mut out, info.link.map_or(0, |l| l.0));
        let name = info.name.as_deref().unwrap_or("");
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
    }
    out
}

fn rngs(state: &EngineState) -> Vec<u8> {
    let mut out = Vec::new();
    for rng in [&state.batching, &state.perturbation, &state.selection] {
        let s = RngState::capture(rng);
        out.extend_from_slice(&s.seed);
        out.extend_from_slice(&s.stream.to_le_bytes());
        out.extend_from_slice(&s.word_pos.to_le_bytes());
    }
    out
}

/// Serializes `state`. Identical states give identical bytes.
pub fn write_checkpoint(state: &EngineState) -> Result<Vec<u8>> {
    let support = if state.support.is_empty() {
        Vec::new()
    } else {
        state.support.to_bytes()?
    };
    let sections = [
        meta(state),
        encode_binary(VERSION_MATRIX, &state.projector.to_matrix()?, None, None)?,
        support,
        replay(&state.replay, state.support.d()),
        registry(&state.registry),
        rngs(state),
    ];
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, sections.len() as u32);
    let mut offset = (12 + sections.len() * 20) as u64;
    for (tag, body) in TAGS.iter().zip(&sections) {
        out.extend_from_slice(*tag);
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        offset += body.len() as u64;
    }
    sections.iter().for_each(|s| out.extend_from_slice(s));
    Ok(out)
}

fn finish(r: &Reader, tag: &[u8; 4]) -> Result<()> {
    if r.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!("trailing bytes in section {}", String::from_utf8_lossy(tag))))
    }
}

/// Inverse of [`write_checkpoint`].
pub fn read_checkpoint(bytes: &[u8]) -> Result<EngineState> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Data("missing IGCK magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut sections: Vec<(&[u8], &[u8])> = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let tag = r.take(4)?;
        let off = r.u64()? as usize;
        let len = r.u64()? as usize;
        let body = off
            .checked_add(len)
            .and_then(|end| bytes.get(off..end))
            .ok_or_else(|| Error::Data(format!("section {} out of bounds", String::from_utf8_lossy(tag))))?;
        sections.push((tag, body));
    }
    let section = |tag: &[u8; 4]| -> Result<&[u8]> {
        sections
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, b)| *b)
            .ok_or_else(|| Error::Data(format!("missing section {}", String::from_utf8_lossy(tag))))
    };

    let mut m = Reader::new(section(b"META")?);
    let stage = match m.u64()? {
        0 => None,
        s => Some(s as usize - 1),
    };
    let d = m.u32()? as usize;
    let support_budget = m.u32()? as usize;
    let replay_budget = m.u32()? as usize;
    finish(&m, b"META")?;

    let rec = decode_binary(section(b"PROJ")?)?;
    let projector = Projector::from_matrix(&rec.matrix)?;
    if projector.in_dim() != d {
        return Err(Error::Data("projector input width disagrees with the support set".into()));
    }

    let sb = section(b"SUPP")?;
    let support = if sb.is_empty() {
        SupportSet::new(d, support_budget)
    } else {
        SupportSet::from_bytes(sb, support_budget)?
    };
    if support.d() != d {
        return Err(Error::Data("support width disagrees with metadata".into()));
    }

    let mut rr = Reader::new(section(b"RPLY")?);
    let n = rr.u32()? as usize;
    let rd = rr.u32()? as usize;
    if rd != d {
        return Err(Error::Data("replay width disagrees with metadata".into()));
    }
    let mut entries = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let embedding = (0..rd).map(|_| rr.f32()).collect::<Result<Vec<_>>>()?;
        let category = CategoryId(rr.u32()?);
        let stage = rr.u32()? as usize;
        entries.push(ReplayEntry {
            embedding,
            category,
            stage,
        });
    }
    finish(&rr, b"RPLY")?;

    let mut g = Reader::new(section(b"REGI")?);
    let n = g.u32()? as usize;
    let mut infos = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let stage = g.u32()? as usize;
        let provenance = match g.u8()? {
            0 => Provenance::Labeled,
            1 => Provenance::Discovered,
            p => return Err(Error::Data(format!("bad provenance byte {p}"))),
        };
        let has_link = g.u8()?;
        let link = g.u32()?;
        let len = g.u32()? as usize;
        let name = std::str::from_utf8(g.take(len)?)
            .map_err(|_| Error::Data("category name is not UTF-8".into()))?
            .to_string();
        infos.push(CategoryInfo {
            stage,
            provenance,
            link: (has_link == 1).then_some(CategoryId(link)),
            name: (!name.is_empty()).then_some(name),
        });
    }
    finish(&g, b"REGI")?;
    let registry = CategoryRegistry::from_entries(infos)?;
    support.validate(&registry)?;
    if let Some(e) = entries.iter().find(|e| !registry.contains(e.category)) {
        return Err(Error::Data(format!("replay entry has unknown category {}", e.category)));
    }

    let mut q = Reader::new(section(b"RNGS")?);
    let mut streams = Vec::with_capacity(3);
    for _ in 0..3 {
        let seed: [u8; 32] = q.take(32)?.try_into().unwrap();
        let stream = q.u64()?;
        let word_pos = q.u128()?;
        streams.push(RngState { seed, stream, word_pos }.restore());
    }
    finish(&q, b"RNGS")?;
    let selection = streams.pop().unwrap();
    let perturbation = streams.pop().unwrap();
    let batching = streams.pop().unwrap();

    Ok(EngineState {
        projector,
        support,
        replay: ReplayBuffer::from_entries(replay_budget, entries),
        registry,
        stage,
        batching,
        perturbation,
        selection,
    })
}

pub fn save_checkpoint(state: &EngineState, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(state)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EngineState> {
    read_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
