use super::synth::{GenConfig, SongInstance};
use super::topics::TopicSet;
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const CORPUS_FORMAT: &str = "mucap-corpus/1";

/// Optional first line of a corpus file recording how it was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusMeta {
    pub format: String,
    pub generation: Option<GenConfig>,
    pub topics: Option<TopicSet>,
    pub vocab: Vocab,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    meta: CorpusMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    music: Vec<Vec<f64>>,
    lyrics: Vec<usize>,
    caption: Vec<usize>,
    music_topic: usize,
    lyric_topic: usize,
}

impl From<&SongInstance> for InstanceRecord {
    fn from(s: &SongInstance) -> Self {
        let cols = s.music.cols();
        Self {
            music: s.music.data().chunks(cols).map(<[f64]>::to_vec).collect(),
            lyrics: s.lyrics.clone(),
            caption: s.caption.clone(),
            music_topic: s.music_topic,
            lyric_topic: s.lyric_topic,
        }
    }
}

impl InstanceRecord {
    fn into_instance(self) -> Result<SongInstance> {
        Ok(SongInstance {
            music: Tensor::from_rows(&self.music)?,
            lyrics: self.lyrics,
            caption: self.caption,
            music_topic: self.music_topic,
            lyric_topic: self.lyric_topic,
        })
    }
}

/// An in-memory corpus with its optional provenance header.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub meta: Option<CorpusMeta>,
    pub instances: Vec<SongInstance>,
}

impl Corpus {
    pub fn generate(config: &GenConfig, topics: &TopicSet) -> Result<Self> {
        let instances = super::synth::generate_corpus(config, topics)?;
        Ok(Self {
            meta: Some(CorpusMeta {
                format: CORPUS_FORMAT.to_string(),
                generation: Some(config.clone()),
                topics: Some(topics.clone()),
                vocab: topics.vocab(),
            }),
            instances,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn vocab(&self) -> Option<&Vocab> {
        self.meta.as_ref().map(|m| &m.vocab)
    }

    /// Consecutive parts of the given sizes, starting at the front.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<Corpus>> {
        let total: usize = sizes.iter().sum();
        if total > self.len() {
            return Err(Error::Param(format!(
                "split sizes {sizes:?} exceed corpus of {}",
                self.len()
            )));
        }
        let mut parts = Vec::with_capacity(sizes.len() + 1);
        let mut start = 0;
        for &n in sizes {
            parts.push(self.subset(start..start + n));
            start += n;
        }
        Ok(parts)
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Corpus {
        Corpus {
            meta: self.meta.clone(),
            instances: self.instances[range].to_vec(),
        }
    }

    /// JSON-lines: optional `{"meta": ...}` line, then one instance per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        if let Some(meta) = &self.meta {
            serde_json::to_writer(&mut w, &MetaLine { meta: meta.clone() })?;
            w.write_all(b"\n")?;
        }
        for s in &self.instances {
            serde_json::to_writer(&mut w, &InstanceRecord::from(s))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut meta = None;
        let mut instances = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |msg: String| Error::Parse { line: line_no, msg };
            if line_no == 1 && line.trim_start().starts_with("{\"meta\"") {
                let m: MetaLine = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
                meta = Some(m.meta);
                continue;
            }
            let record: InstanceRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            instances.push(record.into_instance().map_err(|e| parse(e.to_string()))?);
        }
        Ok(Self { meta, instances })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Corpus {
        let topics = TopicSet::synthetic(3, 4, 2).unwrap();
        let cfg = GenConfig {
            n: 12,
            frames: 8,
            ..Default::default()
        };
        Corpus::generate(&cfg, &topics).unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = small();
        c.save(&path).unwrap();
        let back = Corpus::load(&path).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn truncated_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        small().save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() - 40];
        let lines = cut.lines().count();
        std::fs::write(&path, cut).unwrap();
        match Corpus::load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, lines),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let c = Corpus::read(std::io::Cursor::new("")).unwrap();
        assert!(c.is_empty());
        assert!(c.meta.is_none());
    }

    #[test]
    fn split_sizes() {
        let c = small();
        let parts = c.split(&[5, 4]).unwrap();
        assert_eq!(parts[0].len(), 5);
        assert_eq!(parts[1].len(), 4);
        assert_eq!(parts[1].instances[0], c.instances[5]);
        assert!(c.split(&[10, 10]).is_err());
    }
}
