//! ICBHI-style dataset ingestion: annotation parsing, labeled breathing
//! cycles, patient-disjoint train/test split and the exported index format.
//!
//! Directory layout: `<root>/audio/*.wav`, `<root>/annotations/<id>.txt`,
//! `<root>/split.csv` (header `recording_id,split`). Patient ids come from
//! the leading integer of the recording filename stem unless an optional
//! `<root>/patients.csv` (header `recording_id,patient_id`) overrides them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::parallel;

/// One annotated breathing cycle: start/end in seconds plus the two
/// adventitious-sound flags.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleAnnotation {
    pub start_s: f64,
    pub end_s: f64,
    pub crackle: bool,
    pub wheeze: bool,
}

/// The four ICBHI classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal = 0,
    Crackle = 1,
    Wheeze = 2,
    Both = 3,
}

impl Label {
    pub fn class_id(self) -> usize {
        self as usize
    }

    pub fn from_class_id(id: usize) -> Result<Label> {
        match id {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Crackle),
            2 => Ok(Label::Wheeze),
            3 => Ok(Label::Both),
            _ => Err(Error::Data(format!("class id {id} out of range 0..=3"))),
        }
    }
}

/// (crackle, wheeze) -> class. Bijective with the flag pairs.
pub fn derive_label(crackle: bool, wheeze: bool) -> Label {
    match (crackle, wheeze) {
        (false, false) => Label::Normal,
        (true, false) => Label::Crackle,
        (false, true) => Label::Wheeze,
        (true, true) => Label::Both,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?} (expected train|test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordingMeta {
    pub patient_id: u32,
    pub recording_id: String,
    pub split: Split,
}

/// Where a recording's audio lives. Synthetic datasets keep it in memory.
#[derive(Clone, Debug)]
pub enum AudioSource {
    File(PathBuf),
    Memory(Arc<Waveform>),
}

impl AudioSource {
    pub fn load(&self) -> Result<Waveform> {
        match self {
            AudioSource::File(path) => read_wav(path),
            AudioSource::Memory(wave) => Ok((**wave).clone()),
        }
    }
}

/// One labeled cycle of the dataset.
#[derive(Clone, Debug)]
pub struct IndexItem {
    pub meta: RecordingMeta,
    pub cycle_idx: usize,
    pub annotation: CycleAnnotation,
    pub label: Label,
    pub audio: AudioSource,
}

/// The assembled dataset: labeled cycles plus per-split class counts.
#[derive(Clone, Debug, Default)]
pub struct DatasetIndex {
    pub items: Vec<IndexItem>,
    pub train_counts: [u64; 4],
    pub test_counts: [u64; 4],
    /// (recording_id, cycle_idx) of cycles rejected for being shorter than
    /// the minimum analysis window (25 ms).
    pub skipped_short: Vec<(String, usize)>,
}

impl DatasetIndex {
    pub fn split_items(&self, split: Split) -> impl Iterator<Item = &IndexItem> {
        self.items.iter().filter(move |it| it.meta.split == split)
    }

    pub fn counts(&self, split: Split) -> [u64; 4] {
        match split {
            Split::Train => self.train_counts,
            Split::Test => self.test_counts,
        }
    }
}

/// Input to [`build_index`]: one recording with its annotations.
#[derive(Clone, Debug)]
pub struct RecordingDecl {
    pub recording_id: String,
    pub patient_id: u32,
    pub audio: AudioSource,
    pub annotations: Vec<CycleAnnotation>,
}

const MIN_CYCLE_S: f64 = 0.025;

/// Parse an ICBHI annotation file: one cycle per line, four
/// whitespace-separated fields (start, end, crackle flag, wheeze flag).
pub fn parse_annotation(text: &str) -> Result<Vec<CycleAnnotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let start_s: f64 = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad start time {:?}", fields[0]),
        })?;
        let end_s: f64 = fields[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad end time {:?}", fields[1]),
        })?;
        let flag = |s: &str| -> Result<bool> {
            match s {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Parse {
                    line: line_no,
                    msg: format!("flag must be 0 or 1, found {other:?}"),
                }),
            }
        };
        let crackle = flag(fields[2])?;
        let wheeze = flag(fields[3])?;
        if start_s < 0.0 {
            return Err(Error::Parse { line: line_no, msg: format!("negative start {start_s}") });
        }
        if end_s <= start_s {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("end {end_s} <= start {start_s}"),
            });
        }
        out.push(CycleAnnotation { start_s, end_s, crackle, wheeze });
    }
    Ok(out)
}

/// Inverse of [`parse_annotation`] (tab-separated, one cycle per line).
pub fn format_annotations(anns: &[CycleAnnotation]) -> String {
    let mut out = String::new();
    for a in anns {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            a.start_s,
            a.end_s,
            a.crackle as u8,
            a.wheeze as u8
        ));
    }
    out
}

/// Assemble the dataset index, verifying patient-disjointness of the split
/// and counting labels per class. Cycles shorter than 25 ms are skipped and
/// reported in `skipped_short`.
pub fn build_index(
    recordings: Vec<RecordingDecl>,
    split: &BTreeMap<String, Split>,
) -> Result<DatasetIndex> {
    let mut patient_split: BTreeMap<u32, Split> = BTreeMap::new();
    let mut index = DatasetIndex::default();
    for rec in recordings {
        let s = *split.get(&rec.recording_id).ok_or_else(|| {
            Error::Data(format!("recording {} has no split assignment", rec.recording_id))
        })?;
        match patient_split.get(&rec.patient_id) {
            Some(prev) if *prev != s => {
                return Err(Error::Data(format!(
                    "patient {} appears in both splits",
                    rec.patient_id
                )));
            }
            _ => {
                patient_split.insert(rec.patient_id, s);
            }
        }
        if rec.annotations.is_empty() {
            return Err(Error::Data(format!(
                "recording {} has no annotations",
                rec.recording_id
            )));
        }
        for (cycle_idx, ann) in rec.annotations.iter().enumerate() {
            if ann.end_s - ann.start_s < MIN_CYCLE_S {
                index.skipped_short.push((rec.recording_id.clone(), cycle_idx));
                continue;
            }
            let label = derive_label(ann.crackle, ann.wheeze);
            let counts = match s {
                Split::Train => &mut index.train_counts,
                Split::Test => &mut index.test_counts,
            };
            counts[label.class_id()] += 1;
            index.items.push(IndexItem {
                meta: RecordingMeta {
                    patient_id: rec.patient_id,
                    recording_id: rec.recording_id.clone(),
                    split: s,
                },
                cycle_idx,
                annotation: *ann,
                label,
                audio: rec.audio.clone(),
            });
        }
    }
    Ok(index)
}

/// Slice one cycle out of a recording. Ends that overshoot the recording by
/// at most one hop (10 ms) are clipped; anything further out is an error.
pub fn extract_cycle(wave: &Waveform, ann: &CycleAnnotation) -> Result<Waveform> {
    let rate = wave.rate as f64;
    let start = (ann.start_s * rate).round() as usize;
    let mut end = (ann.end_s * rate).round() as usize;
    let len = wave.samples.len();
    if start >= len {
        return Err(Error::Data(format!(
            "cycle start {}s is beyond the {}s recording",
            ann.start_s,
            wave.duration_s()
        )));
    }
    if end > len {
        let overshoot_s = ann.end_s - wave.duration_s();
        if overshoot_s <= 0.010 {
            end = len;
        } else {
            return Err(Error::Data(format!(
                "cycle end {}s exceeds the {}s recording by more than one hop",
                ann.end_s,
                wave.duration_s()
            )));
        }
    }
    if end <= start {
        return Err(Error::Data(format!(
            "cycle [{}, {}]s collapses to zero samples",
            ann.start_s, ann.end_s
        )));
    }
    Ok(Waveform::new(wave.samples[start..end].to_vec(), wave.rate))
}

/// Read a WAV file: 16-bit PCM or 32-bit float, mono or first channel.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            if spec.bits_per_sample != 16 {
                return Err(Error::Data(format!(
                    "{}: only 16-bit PCM or float WAV supported, got {}-bit int",
                    path.display(),
                    spec.bits_per_sample
                )));
            }
            reader
                .samples::<i16>()
                .step_by(channels)
                .map(|s| s.map(|v| v as f64 / 32768.0))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
    };
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Write a mono 16-bit PCM WAV file.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    writer.finalize().map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn parse_csv_pairs(text: &str, path: &Path, header: [&str; 2]) -> Result<Vec<(String, String)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == format!("{},{}", header[0], header[1]) => {}
        _ => {
            return Err(Error::Data(format!(
                "{}: expected header {},{}",
                path.display(),
                header[0],
                header[1]
            )));
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or(Error::Parse {
            line: i + 1,
            msg: "expected two comma-separated fields".into(),
        })?;
        out.push((a.trim().to_string(), b.trim().to_string()));
    }
    Ok(out)
}

/// Patient id = leading integer of the recording id (ICBHI convention).
pub fn patient_id_from_recording(recording_id: &str) -> Result<u32> {
    let digits: String = recording_id.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().map_err(|_| {
        Error::Data(format!(
            "cannot derive patient id from recording {recording_id:?}; provide patients.csv"
        ))
    })
}

/// Load a dataset directory and build its index.
pub fn load_dataset_dir(root: &Path) -> Result<DatasetIndex> {
    let audio_dir = root.join("audio");
    let ann_dir = root.join("annotations");
    let split_path = root.join("split.csv");
    if !audio_dir.is_dir() || !ann_dir.is_dir() || !split_path.is_file() {
        return Err(Error::Data(format!(
            "{}: expected audio/, annotations/ and split.csv",
            root.display()
        )));
    }
    let split_text = std::fs::read_to_string(&split_path)?;
    let mut split = BTreeMap::new();
    for (id, s) in parse_csv_pairs(&split_text, &split_path, ["recording_id", "split"])? {
        split.insert(id, Split::parse(&s)?);
    }
    let overrides: BTreeMap<String, u32> = {
        let p = root.join("patients.csv");
        if p.is_file() {
            let text = std::fs::read_to_string(&p)?;
            parse_csv_pairs(&text, &p, ["recording_id", "patient_id"])?
                .into_iter()
                .map(|(id, pid)| {
                    pid.parse::<u32>()
                        .map(|v| (id, v))
                        .map_err(|_| Error::Data(format!("patients.csv: bad patient id {pid:?}")))
                })
                .collect::<Result<_>>()?
        } else {
            BTreeMap::new()
        }
    };
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(&audio_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "wav").unwrap_or(false))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(Error::Data(format!("{}: no .wav files", audio_dir.display())));
    }
    // annotation files parse independently, one task per recording
    let parsed: Vec<Result<RecordingDecl>> = parallel::batch_map(&wavs, |path| {
        let recording_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("{}: bad file name", path.display())))?
            .to_string();
        let ann_path = ann_dir.join(format!("{recording_id}.txt"));
        if !ann_path.is_file() {
            return Err(Error::Data(format!(
                "recording {recording_id} is missing its annotation file"
            )));
        }
        let annotations = parse_annotation(&std::fs::read_to_string(&ann_path)?)?;
        let patient_id = match overrides.get(&recording_id) {
            Some(pid) => *pid,
            None => patient_id_from_recording(&recording_id)?,
        };
        Ok(RecordingDecl {
            recording_id,
            patient_id,
            audio: AudioSource::File(path.clone()),
            annotations,
        })
    });
    let recordings = parsed.into_iter().collect::<Result<Vec<_>>>()?;
    build_index(recordings, &split)
}

/// Export the index as newline-delimited
/// `recording_id,cycle_idx,start_s,end_s,label,split` records.
pub fn export_index(index: &DatasetIndex) -> String {
    let mut out = String::from("recording_id,cycle_idx,start_s,end_s,label,split\n");
    for it in &index.items {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            it.meta.recording_id,
            it.cycle_idx,
            it.annotation.start_s,
            it.annotation.end_s,
            it.label.class_id(),
            it.meta.split.as_str()
        ));
    }
    out
}

/// Check the index invariants (per-split counts match the item multiset,
/// patient sets disjoint). Used by tests and the CLI after assembly.
pub fn verify_index(index: &DatasetIndex) -> Result<()> {
    let mut train = [0u64; 4];
    let mut test = [0u64; 4];
    let mut train_patients = BTreeSet::new();
    let mut test_patients = BTreeSet::new();
    for it in &index.items {
        match it.meta.split {
            Split::Train => {
                train[it.label.class_id()] += 1;
                train_patients.insert(it.meta.patient_id);
            }
            Split::Test => {
                test[it.label.class_id()] += 1;
                test_patients.insert(it.meta.patient_id);
            }
        }
    }
    if train != index.train_counts || test != index.test_counts {
        return Err(Error::Data("index class counts do not match items".into()));
    }
    if !train_patients.is_disjoint(&test_patients) {
        return Err(Error::Data("train and test patient sets overlap".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn derive_label_covers_all_pairs() {
        assert_eq!(derive_label(false, false), Label::Normal);
        assert_eq!(derive_label(true, false), Label::Crackle);
        assert_eq!(derive_label(false, true), Label::Wheeze);
        assert_eq!(derive_label(true, true), Label::Both);
        // bijection: distinct pairs map to distinct classes
        let all: BTreeSet<Label> = [(false, false), (true, false), (false, true), (true, true)]
            .iter()
            .map(|(c, w)| derive_label(*c, *w))
            .collect();
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn parse_single_line() {
        let anns = parse_annotation("0.364\t2.436\t0\t1").unwrap();
        assert_eq!(
            anns,
            vec![CycleAnnotation { start_s: 0.364, end_s: 2.436, crackle: false, wheeze: true }]
        );
    }

    #[test]
    fn parse_empty_file() {
        assert_eq!(parse_annotation("").unwrap(), vec![]);
    }

    #[test]
    fn parse_mixed_whitespace() {
        let anns = parse_annotation("0.5   2.0\t 1  0\n2.0\t4.25\t1\t1").unwrap();
        assert_eq!(anns.len(), 2);
        assert!(anns[0].crackle && !anns[0].wheeze);
        assert!(anns[1].crackle && anns[1].wheeze);
    }

    #[test]
    fn parse_rejects_inverted_interval_with_line_number() {
        let err = parse_annotation("1.0\t0.5\t0\t0").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_bad_field_count_and_bad_flags() {
        assert!(parse_annotation("1.0\t2.0\t0").is_err());
        assert!(parse_annotation("1.0\t2.0\t0\t2").is_err());
        assert!(parse_annotation("a\t2.0\t0\t0").is_err());
        match parse_annotation("0.0 1.0 0 0\n1.0 2.0 0 3").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn annotation_round_trip(
            spans in proptest::collection::vec((0.0f64..100.0, 0.03f64..10.0, any::<bool>(), any::<bool>()), 0..20)
        ) {
            let anns: Vec<CycleAnnotation> = spans
                .into_iter()
                .map(|(start, len, c, w)| CycleAnnotation {
                    start_s: start,
                    end_s: start + len,
                    crackle: c,
                    wheeze: w,
                })
                .collect();
            let text = format_annotations(&anns);
            let back = parse_annotation(&text).unwrap();
            prop_assert_eq!(back, anns);
        }
    }

    fn decl(id: &str, patient: u32, anns: Vec<CycleAnnotation>) -> RecordingDecl {
        RecordingDecl {
            recording_id: id.to_string(),
            patient_id: patient,
            audio: AudioSource::Memory(Arc::new(Waveform::new(vec![0.0; 16_000], 16_000))),
            annotations: anns,
        }
    }

    fn ann(start: f64, end: f64, c: bool, w: bool) -> CycleAnnotation {
        CycleAnnotation { start_s: start, end_s: end, crackle: c, wheeze: w }
    }

    #[test]
    fn build_index_counts_and_verifies() {
        let recs = vec![
            decl("101_a", 101, vec![ann(0.0, 1.0, false, false), ann(1.0, 2.0, true, false)]),
            decl("102_a", 102, vec![ann(0.0, 1.0, false, true), ann(1.0, 2.0, true, true)]),
        ];
        let mut split = BTreeMap::new();
        split.insert("101_a".to_string(), Split::Train);
        split.insert("102_a".to_string(), Split::Test);
        let idx = build_index(recs, &split).unwrap();
        assert_eq!(idx.train_counts, [1, 1, 0, 0]);
        assert_eq!(idx.test_counts, [0, 0, 1, 1]);
        assert_eq!(idx.items.len(), 4);
        verify_index(&idx).unwrap();
    }

    #[test]
    fn build_index_rejects_patient_in_both_splits() {
        let recs = vec![
            decl("101_a", 101, vec![ann(0.0, 1.0, false, false)]),
            decl("101_b", 101, vec![ann(0.0, 1.0, false, false)]),
        ];
        let mut split = BTreeMap::new();
        split.insert("101_a".to_string(), Split::Train);
        split.insert("101_b".to_string(), Split::Test);
        let err = build_index(recs, &split).unwrap_err();
        assert!(err.to_string().contains("patient 101"));
    }

    #[test]
    fn build_index_rejects_missing_split() {
        let recs = vec![decl("101_a", 101, vec![ann(0.0, 1.0, false, false)])];
        let split = BTreeMap::new();
        assert!(build_index(recs, &split).is_err());
    }

    #[test]
    fn build_index_skips_sub_window_cycles() {
        let recs = vec![decl(
            "101_a",
            101,
            vec![ann(0.0, 0.010, false, false), ann(0.1, 1.0, false, false)],
        )];
        let mut split = BTreeMap::new();
        split.insert("101_a".to_string(), Split::Train);
        let idx = build_index(recs, &split).unwrap();
        assert_eq!(idx.items.len(), 1);
        assert_eq!(idx.skipped_short, vec![("101_a".to_string(), 0)]);
    }

    #[test]
    fn extract_cycle_slices_by_sample_index() {
        let wave = Waveform::new((0..40_000).map(|i| i as f64).collect(), 4_000);
        let out = extract_cycle(&wave, &ann(1.0, 2.0, false, false)).unwrap();
        assert_eq!(out.samples.len(), 4_000);
        assert_eq!(out.samples[0], 4_000.0);
    }

    #[test]
    fn extract_cycle_full_duration_is_identity() {
        let wave = Waveform::new(vec![0.25; 16_000], 16_000);
        let out = extract_cycle(&wave, &ann(0.0, 1.0, false, false)).unwrap();
        assert_eq!(out.samples, wave.samples);
    }

    #[test]
    fn extract_cycle_rejects_out_of_range_start() {
        let wave = Waveform::new(vec![0.0; 40_000], 4_000);
        assert!(extract_cycle(&wave, &ann(12.0, 13.0, false, false)).is_err());
    }

    #[test]
    fn extract_cycle_clips_one_hop_overshoot() {
        let wave = Waveform::new(vec![0.0; 16_000], 16_000);
        let out = extract_cycle(&wave, &ann(0.5, 1.008, false, false)).unwrap();
        assert_eq!(out.samples.len(), 8_000);
        assert!(extract_cycle(&wave, &ann(0.5, 1.05, false, false)).is_err());
    }

    #[test]
    fn export_index_format() {
        let recs = vec![decl("101_a", 101, vec![ann(0.25, 1.5, true, false)])];
        let mut split = BTreeMap::new();
        split.insert("101_a".to_string(), Split::Train);
        let idx = build_index(recs, &split).unwrap();
        let text = export_index(&idx);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "recording_id,cycle_idx,start_s,end_s,label,split");
        assert_eq!(lines.next().unwrap(), "101_a,0,0.25,1.5,1,train");
    }

    #[test]
    fn patient_id_parses_leading_integer() {
        assert_eq!(patient_id_from_recording("101_1b1_Al_sc_Meditron").unwrap(), 101);
        assert!(patient_id_from_recording("no_digits").is_err());
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let wave = Waveform::new(
            (0..1000).map(|i| ((i as f64) * 0.01).sin() * 0.5).collect(),
            16_000,
        );
        write_wav(&path, &wave).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.rate, 16_000);
        assert_eq!(back.samples.len(), 1000);
        for (a, b) in wave.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32_000.0);
        }
    }
}
