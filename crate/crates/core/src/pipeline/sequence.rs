use super::{LabeledEpoch, PipelineError, StageClass, Symbol};

/// `maxtime` consecutive epochs with teacher-forcing frames:
/// `decoder_inputs = [SOD, l1, .., l(T-1)]`, `targets = [l1, .., lT, EOD]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSequence {
    pub inputs: Vec<LabeledEpoch>,
    pub decoder_inputs: Vec<Symbol>,
    pub targets: Vec<Symbol>,
}

impl EpochSequence {
    pub fn new(inputs: Vec<LabeledEpoch>) -> Result<Self, PipelineError> {
        if inputs.is_empty() {
            return Err(PipelineError::ZeroMaxtime);
        }
        let labels: Vec<Symbol> = inputs.iter().map(|e| Symbol::Stage(e.label)).collect();
        let mut decoder_inputs = Vec::with_capacity(labels.len());
        decoder_inputs.push(Symbol::Sod);
        decoder_inputs.extend_from_slice(&labels[..labels.len() - 1]);
        let mut targets = labels;
        targets.push(Symbol::Eod);
        Ok(Self { inputs, decoder_inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Decoder inputs aligned with all `T + 1` targets: `decoder_inputs`
    /// followed by the last stage, so the final step is the one that should
    /// emit EOD.
    pub fn teacher_inputs(&self) -> Vec<Symbol> {
        let mut v = self.decoder_inputs.clone();
        v.push(self.targets[self.targets.len() - 2]);
        v
    }

    pub fn labels(&self) -> impl Iterator<Item = StageClass> + '_ {
        self.inputs.iter().map(|e| e.label)
    }
}

/// Non-overlapping windows of `maxtime` epochs; a short remainder is dropped.
pub fn make_sequences(epochs: Vec<LabeledEpoch>, maxtime: usize) -> Result<Vec<EpochSequence>, PipelineError> {
    if maxtime == 0 {
        return Err(PipelineError::ZeroMaxtime);
    }
    let n = epochs.len() / maxtime;
    let mut it = epochs.into_iter();
    (0..n).map(|_| EpochSequence::new(it.by_ref().take(maxtime).collect())).collect()
}

/// SMOTE epochs carry no temporal context; they are grouped by class into
/// constant-label sequences of `maxtime`, dropping each class's remainder.
pub fn synthetic_sequences(synthetic: Vec<LabeledEpoch>, maxtime: usize) -> Result<Vec<EpochSequence>, PipelineError> {
    if maxtime == 0 {
        return Err(PipelineError::ZeroMaxtime);
    }
    let mut by_class: Vec<Vec<LabeledEpoch>> = vec![Vec::new(); StageClass::ALL.len()];
    for e in synthetic {
        by_class[e.label.index()].push(e);
    }
    let mut out = Vec::new();
    for group in by_class {
        out.extend(make_sequences(group, maxtime)?);
    }
    Ok(out)
}

/// A window used at scoring time together with the number of leading epochs
/// already covered by the previous window.
#[derive(Debug, Clone, PartialEq)]
pub struct CoveringWindow {
    pub sequence: EpochSequence,
    pub skip: usize,
}

/// Windows that score every epoch exactly once: non-overlapping windows plus,
/// when a remainder exists, one final window aligned to the end whose first
/// `skip` predictions are discarded. Recordings shorter than `maxtime`
/// produce nothing.
pub fn covering_sequences(epochs: &[LabeledEpoch], maxtime: usize) -> Result<Vec<CoveringWindow>, PipelineError> {
    if maxtime == 0 {
        return Err(PipelineError::ZeroMaxtime);
    }
    let n = epochs.len();
    if n < maxtime {
        return Ok(Vec::new());
    }
    let full = n / maxtime;
    let mut out = Vec::with_capacity(full + 1);
    for w in 0..full {
        let seq = EpochSequence::new(epochs[w * maxtime..(w + 1) * maxtime].to_vec())?;
        out.push(CoveringWindow { sequence: seq, skip: 0 });
    }
    let rem = n - full * maxtime;
    if rem > 0 {
        let seq = EpochSequence::new(epochs[n - maxtime..].to_vec())?;
        out.push(CoveringWindow { sequence: seq, skip: maxtime - rem });
    }
    Ok(out)
}
