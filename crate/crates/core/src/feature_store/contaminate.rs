use rand::seq::{index, SliceRandom};

use super::{DatasetManifest, FeatureTensor, ImageLabel};
use crate::error::{FunadError, Result};
use crate::rng::{self, streams};

/// Unlabeled training split built from normals plus relocated anomalies.
#[derive(Debug, Clone)]
pub struct ContaminatedSplit {
    pub train: FeatureTensor,
    /// Ground truth for `train`, kept for evaluation and diagnostics only.
    pub truth: DatasetManifest,
    /// For each training image, its index in the normal or anomaly source.
    pub sources: Vec<(ImageLabel, usize)>,
    /// Anomaly-source indices moved into `train`, ascending.
    pub moved_anomalies: Vec<usize>,
}

/// All normals plus `floor(ratio * n_normal)` anomalies drawn without
/// replacement, shuffled.
pub fn contaminate(
    normal: &FeatureTensor,
    anomaly: &FeatureTensor,
    ratio: f64,
    seed: u64,
) -> Result<ContaminatedSplit> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(FunadError::arg(format!("ratio {ratio} outside [0, 1)")));
    }
    if normal.n_patches() != anomaly.n_patches()
        || normal.dim() != anomaly.dim()
        || normal.grid() != anomaly.grid()
    {
        return Err(FunadError::arg("normal and anomaly tensors have different shapes"));
    }
    // The epsilon keeps products like 0.29 * 100 from flooring to 28.
    let wanted = (ratio * normal.n_images() as f64 + 1e-9).floor() as usize;
    if wanted > anomaly.n_images() {
        return Err(FunadError::arg(format!(
            "need {wanted} anomalies, only {} available",
            anomaly.n_images()
        )));
    }
    let mut rng = rng::stream(seed, streams::CONTAMINATE);
    let mut moved = index::sample(&mut rng, anomaly.n_images(), wanted).into_vec();
    moved.sort_unstable();

    let mut sources: Vec<(ImageLabel, usize)> = (0..normal.n_images())
        .map(|i| (ImageLabel::Normal, i))
        .chain(moved.iter().map(|&i| (ImageLabel::Anomaly, i)))
        .collect();
    sources.shuffle(&mut rng);

    let mut data = Vec::with_capacity(sources.len() * normal.image_len());
    for &(label, i) in &sources {
        let src = match label {
            ImageLabel::Normal => normal,
            ImageLabel::Anomaly => anomaly,
        };
        data.extend_from_slice(src.image(i));
    }
    let (gh, gw) = normal.grid();
    let train = FeatureTensor::new(sources.len(), normal.n_patches(), normal.dim(), gh, gw, data)?;
    let truth = DatasetManifest::with_labels(sources.iter().map(|s| s.0).collect());
    Ok(ContaminatedSplit {
        train,
        truth,
        sources,
        moved_anomalies: moved,
    })
}
