use std::fmt::Write as _;

use super::{ModelGraph, Variant};
use crate::tensor::KernelShape;

/// Parameter count of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    pub kind: &'static str,
    /// `(tensor name, shape)` of every learnable tensor in the layer.
    pub tensors: Vec<(String, Vec<usize>)>,
    pub count: usize,
    /// Set for convolutional layers, whose count must equal `kh·kw·c_in·c_out + c_out`.
    pub kernel: Option<KernelShape>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterReport {
    pub total: usize,
    pub layers: Vec<LayerCount>,
    /// Batch-norm running statistics; saved with the model but not learned.
    pub buffer_scalars: usize,
}

/// Published totals for the full-size models (filters 64..512, one input channel).
pub fn published_total(variant: Variant, d: usize) -> Option<usize> {
    match (variant, d) {
        (Variant::Bcdu, 1) => Some(8_205_573),
        (Variant::Bcdu, 3) => Some(20_659_717),
        (Variant::Inceptnet, 1) => Some(7_829_872),
        (Variant::Inceptnet, 3) => Some(18_453_190),
        _ => None,
    }
}

pub fn count_parameters(graph: &ModelGraph) -> ParameterReport {
    let store = graph.store();
    let layers: Vec<LayerCount> = graph
        .layer_groups()
        .into_iter()
        .map(|(name, kind, ids, kernel)| {
            let tensors: Vec<(String, Vec<usize>)> = ids
                .iter()
                .map(|&id| {
                    let p = store.get(id);
                    (p.name.clone(), p.shape.clone())
                })
                .collect();
            let count = ids.iter().map(|&id| store.get(id).len()).sum();
            LayerCount {
                name,
                kind,
                tensors,
                count,
                kernel,
            }
        })
        .collect();
    ParameterReport {
        total: layers.iter().map(|l| l.count).sum(),
        layers,
        buffer_scalars: store.buffers().iter().map(|b| b.value.len()).sum(),
    }
}

impl ParameterReport {
    /// Conv layers whose count disagrees with the closed form.
    pub fn closed_form_mismatches(&self) -> Vec<&LayerCount> {
        self.layers
            .iter()
            .filter(|l| l.kernel.is_some_and(|k| k.param_count() != l.count))
            .collect()
    }

    /// Signed relative gap `(total - expected) / expected`.
    pub fn relative_gap(&self, expected: usize) -> f64 {
        (self.total as f64 - expected as f64) / expected as f64
    }

    pub fn render(&self, reference: Option<usize>) -> String {
        let mut s = String::new();
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        writeln!(s, "{:<width$}  {:<16}  {:>10}  shapes", "layer", "kind", "params").unwrap();
        for l in &self.layers {
            let shapes: Vec<String> = l.tensors.iter().map(|(_, sh)| format!("{sh:?}")).collect();
            writeln!(s, "{:<width$}  {:<16}  {:>10}  {}", l.name, l.kind, l.count, shapes.join(" ")).unwrap();
        }
        writeln!(s, "total learnable parameters: {}", self.total).unwrap();
        writeln!(s, "batch-norm running statistics (not learned): {}", self.buffer_scalars).unwrap();
        if let Some(r) = reference {
            writeln!(
                s,
                "reference total: {r}  gap: {:+} ({:+.2}%)",
                self.total as i64 - r as i64,
                100.0 * self.relative_gap(r)
            )
            .unwrap();
            writeln!(
                s,
                "note: the branch filter allocation and fusion widths are not fully specified by the reference; the gap reflects that choice"
            )
            .unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_model, NetworkSpec};

    #[test]
    fn tiny_conv_layers_match_closed_form() {
        for v in [Variant::Unet, Variant::Bcdu, Variant::Inceptnet] {
            for d in [1, 3] {
                let g = build_model(&NetworkSpec::tiny(v, d)).unwrap();
                let r = count_parameters(&g);
                assert!(r.closed_form_mismatches().is_empty());
                assert_eq!(r.total, g.store().total());
            }
        }
    }
}
