use crate::data::MultiModalSample;
use crate::encoder::model::{group_of, EncoderModel, Modality, Provenance, SegmentContent};
use crate::error::{Error, Result};
use crate::numerics::sq_dist;

/// Replaces every prototype with the nearest segment representation from a
/// training sample of its own class and records where it came from.
///
/// Ties go to the smallest sample id, then the smallest segment index.
pub fn project_prototypes(model: &EncoderModel, train: &[MultiModalSample]) -> Result<EncoderModel> {
    let cfg = &model.config;
    let mut order: Vec<&MultiModalSample> = train.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));

    let mut encoded = Vec::with_capacity(order.len());
    for s in &order {
        let group = group_of(s, cfg)?;
        let zt = model.encode_time(&s.series_tensor()?)?;
        let zs = model.encode_text(s.embeddings()?)?;
        encoded.push((group, zt, zs));
    }
    for class in 0..cfg.classes {
        if !encoded.iter().any(|e| e.0 == class) {
            return Err(Error::Projection { class });
        }
    }

    let mut out = model.clone();
    let mut provenance = Vec::with_capacity(cfg.total_time_prototypes() + cfg.total_text_prototypes());
    for modality in [Modality::Time, Modality::Text] {
        let per_class = model.prototypes_per_class(modality);
        let width = model.kernel_width(modality);
        let protos = model.prototypes(modality);
        let mut projected = protos.clone();
        let h = protos.cols();
        for row in 0..protos.rows() {
            let class = row / per_class;
            let p = protos.row(row);
            let mut best: Option<(f64, usize, usize)> = None;
            for (si, (group, zt, zs)) in encoded.iter().enumerate() {
                if *group != class {
                    continue;
                }
                let z = match modality {
                    Modality::Time => zt,
                    Modality::Text => zs,
                };
                for j in 0..z.cols() {
                    let d = sq_dist(p, &z.column(j))?;
                    if best.is_none_or(|(bd, _, _)| d < bd) {
                        best = Some((d, si, j));
                    }
                }
            }
            let (_, si, j) = best.expect("class has samples");
            let z = match modality {
                Modality::Time => &encoded[si].1,
                Modality::Text => &encoded[si].2,
            };
            projected.data_mut()[row * h..(row + 1) * h].copy_from_slice(&z.column(j));
            provenance.push(Provenance {
                modality,
                class,
                sample_id: order[si].id.clone(),
                segment: j,
                content: SegmentContent::of(order[si], modality, j, width),
            });
        }
        match modality {
            Modality::Time => out.params.time_prototypes = projected,
            Modality::Text => out.params.text_prototypes = projected,
        }
    }
    out.provenance = Some(provenance);
    Ok(out)
}
