//! File formats: "FEA1" feature archives, "NNP1" network checkpoints,
//! tab-separated label and transcription files. All binary values are
//! little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::corpus::{Corpus, Utterance};
use crate::error::{AudError, Result};
use crate::nnkit::{Activation, Layer, NetParams};

const FEA_MAGIC: &[u8; 4] = b"FEA1";
const NNP_MAGIC: &[u8; 4] = b"NNP1";

fn fmt_err(path: &Path, reason: impl Into<String>) -> AudError {
    AudError::Format { path: path.display().to_string(), reason: reason.into() }
}

fn write_u16(w: &mut impl Write, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_str16(w: &mut impl Write, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    write_u16(w, bytes.len() as u16)?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_str16(r: &mut impl Read, path: &Path) -> Result<String> {
    let len = read_u16(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| fmt_err(path, "invalid UTF-8 string"))
}

/// Writes a corpus's frames as a "FEA1" archive. Labels are not part of the
/// archive; see [`write_labels`].
pub fn write_features(path: &Path, corpus: &Corpus) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(FEA_MAGIC)?;
    write_u32(&mut w, corpus.utterances.len() as u32)?;
    for utt in &corpus.utterances {
        write_str16(&mut w, &utt.utt_id)?;
        write_str16(&mut w, &utt.speaker_id)?;
        write_u32(&mut w, utt.n_frames() as u32)?;
        write_u32(&mut w, utt.feat_dim() as u32)?;
        for frame in &utt.frames {
            for &v in frame {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a "FEA1" archive. `frame_rate` is not stored in the format; the
/// caller supplies it.
pub fn read_features(path: &Path, frame_rate: f64) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEA_MAGIC {
        return Err(fmt_err(path, "bad magic, expected FEA1"));
    }
    let count = read_u32(&mut r)? as usize;
    let mut utterances = Vec::with_capacity(count);
    let mut speakers = Vec::new();
    for _ in 0..count {
        let utt_id = read_str16(&mut r, path)?;
        let speaker_id = read_str16(&mut r, path)?;
        let n_frames = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let mut frames = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            let mut row = Vec::with_capacity(dim);
            for _ in 0..dim {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                row.push(f32::from_le_bytes(b) as f64);
            }
            frames.push(row);
        }
        if !speakers.contains(&speaker_id) {
            speakers.push(speaker_id.clone());
        }
        utterances.push(Utterance { utt_id, speaker_id, frames, phone_labels: None });
    }
    Ok(Corpus { utterances, speakers, frame_rate })
}

/// Label file: one line per utterance, `utt_id<TAB>space-separated integers`.
pub fn write_labels(path: &Path, labels: &[(String, Vec<usize>)]) -> Result<()> {
    let mut out = String::new();
    for (utt_id, ls) in labels {
        out.push_str(utt_id);
        out.push('\t');
        let strs: Vec<String> = ls.iter().map(|l| l.to_string()).collect();
        out.push_str(&strs.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<(String, Vec<usize>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (utt_id, rest) = line
            .split_once('\t')
            .ok_or_else(|| fmt_err(path, format!("line {}: missing tab", lineno + 1)))?;
        let labels = rest
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| fmt_err(path, format!("line {}: bad label {t}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((utt_id.to_string(), labels));
    }
    Ok(out)
}

fn write_net(w: &mut impl Write, net: &NetParams) -> Result<()> {
    write_u32(w, net.layers.len() as u32)?;
    for layer in &net.layers {
        write_u32(w, layer.in_dim as u32)?;
        write_u32(w, layer.out_dim as u32)?;
        w.write_all(&[layer.activation.tag()])?;
        for &v in &layer.weights {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        for &v in &layer.bias {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_net(r: &mut impl Read, path: &Path) -> Result<NetParams> {
    let n_layers = read_u32(r)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = read_u32(r)? as usize;
        let out_dim = read_u32(r)? as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let activation = Activation::from_tag(tag[0])
            .map_err(|_| fmt_err(path, format!("bad activation tag {}", tag[0])))?;
        let mut read_f32s = |n: usize| -> Result<Vec<f64>> {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                v.push(f32::from_le_bytes(b) as f64);
            }
            Ok(v)
        };
        let weights = read_f32s(in_dim * out_dim)?;
        let bias = read_f32s(out_dim)?;
        layers.push(Layer { weights, bias, in_dim, out_dim, activation });
    }
    Ok(NetParams { layers })
}

/// Checkpoint with one or more named networks plus optional named vector
/// tables (used for the s-vector lookup table).
pub struct Checkpoint {
    pub nets: Vec<(String, NetParams)>,
    pub tables: Vec<(String, BTreeMap<String, Vec<f64>>)>,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(NNP_MAGIC)?;
    write_u32(&mut w, ckpt.nets.len() as u32)?;
    for (name, net) in &ckpt.nets {
        write_str16(&mut w, name)?;
        write_net(&mut w, net)?;
    }
    write_u32(&mut w, ckpt.tables.len() as u32)?;
    for (name, table) in &ckpt.tables {
        write_str16(&mut w, name)?;
        write_u32(&mut w, table.len() as u32)?;
        for (id, vec) in table {
            write_str16(&mut w, id)?;
            write_u32(&mut w, vec.len() as u32)?;
            for &v in vec {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != NNP_MAGIC {
        return Err(fmt_err(path, "bad magic, expected NNP1"));
    }
    let n_nets = read_u32(&mut r)? as usize;
    let mut nets = Vec::with_capacity(n_nets);
    for _ in 0..n_nets {
        let name = read_str16(&mut r, path)?;
        let net = read_net(&mut r, path)?;
        nets.push((name, net));
    }
    let n_tables = read_u32(&mut r)? as usize;
    let mut tables = Vec::with_capacity(n_tables);
    for _ in 0..n_tables {
        let name = read_str16(&mut r, path)?;
        let n_entries = read_u32(&mut r)? as usize;
        let mut table = BTreeMap::new();
        for _ in 0..n_entries {
            let id = read_str16(&mut r, path)?;
            let dim = read_u32(&mut r)? as usize;
            let mut vec = Vec::with_capacity(dim);
            for _ in 0..dim {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                vec.push(f32::from_le_bytes(b) as f64);
            }
            table.insert(id, vec);
        }
        tables.push((name, table));
    }
    Ok(Checkpoint { nets, tables })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, SyntheticSpec};
    use crate::nnkit::LayerSpec;
    use rand::SeedableRng;

    #[test]
    fn feature_archive_roundtrip() {
        let spec = SyntheticSpec {
            n_phones: 3,
            n_speakers: 2,
            feat_dim: 5,
            utt_per_speaker: 2,
            phones_per_utt: 3,
            ..Default::default()
        };
        let corpus = generate_corpus(&spec, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.fea");
        write_features(&path, &corpus).unwrap();
        let back = read_features(&path, corpus.frame_rate).unwrap();
        assert_eq!(back.utterances.len(), corpus.utterances.len());
        for (a, b) in corpus.utterances.iter().zip(&back.utterances) {
            assert_eq!(a.utt_id, b.utt_id);
            assert_eq!(a.speaker_id, b.speaker_id);
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                for (x, y) in fa.iter().zip(fb) {
                    assert!((x - y).abs() < 1e-6, "f32 roundtrip tolerance");
                }
            }
        }
    }

    #[test]
    fn label_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        let labels = vec![
            ("utt_a".to_string(), vec![0, 1, 1, 2]),
            ("utt_b".to_string(), vec![5]),
        ];
        write_labels(&path, &labels).unwrap();
        assert_eq!(read_labels(&path).unwrap(), labels);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let net = NetParams::init(
            &[
                LayerSpec::new(4, 3, Activation::Sigmoid),
                LayerSpec::new(3, 2, Activation::Linear),
            ],
            &mut rng,
        )
        .unwrap();
        let mut table = BTreeMap::new();
        table.insert("spk0".to_string(), vec![0.25, -0.5]);
        table.insert("spk1".to_string(), vec![1.0, 2.0]);
        let ckpt = Checkpoint {
            nets: vec![("enc".to_string(), net.clone())],
            tables: vec![("svectors".to_string(), table.clone())],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nnp");
        write_checkpoint(&path, &ckpt).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.nets.len(), 1);
        assert_eq!(back.nets[0].0, "enc");
        let bn = &back.nets[0].1;
        assert_eq!(bn.layers.len(), 2);
        assert_eq!(bn.layers[0].activation, Activation::Sigmoid);
        for (la, lb) in net.layers.iter().zip(&bn.layers) {
            for (x, y) in la.weights.iter().zip(&lb.weights) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert_eq!(back.tables[0].1, table);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fea");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        assert!(read_features(&path, 100.0).is_err());
        assert!(read_checkpoint(&path).is_err());
    }
}
