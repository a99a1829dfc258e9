use crate::error::Result;
use crate::numcore::nearest::nearest;
use crate::numcore::{chamfer_value, Scalar};

use super::{PointCloudPair, Phase, ReconstructionOutput, SubCloud, Substructure};

/// Phase × substructure table (rows ED, ES; columns LV endo, LV epi, RV endo).
pub type ChamferTable<T> = [[T; 3]; 2];

/// Symmetric Chamfer distance in the clouds' unit:
/// `½ (mean_a min_b ‖a − b‖ + mean_b min_a ‖b − a‖)`.
///
/// Uses the grid-accelerated neighbour search for large clouds.
pub fn chamfer<T: Scalar>(a: &SubCloud<T>, b: &SubCloud<T>) -> T {
    let ab = nearest(a.flat(), b.flat());
    let ba = nearest(b.flat(), a.flat());
    chamfer_value(&ab.dist2, &ba.dist2)
}

/// All-pairs reference implementation of [`chamfer`].
pub fn chamfer_brute<T: Scalar>(a: &SubCloud<T>, b: &SubCloud<T>) -> T {
    let directed = |from: &SubCloud<T>, to: &SubCloud<T>| {
        let mut total = T::zero();
        for p in from.points() {
            let mut best = T::infinity();
            for q in to.points() {
                let d = (p[0] - q[0]) * (p[0] - q[0])
                    + (p[1] - q[1]) * (p[1] - q[1])
                    + (p[2] - q[2]) * (p[2] - q[2]);
                best = best.min(d);
            }
            total = total + best.sqrt();
        }
        total / T::lit(from.len() as f64)
    };
    T::lit(0.5) * (directed(a, b) + directed(b, a))
}

/// Chamfer distance between each predicted dense channel and the matching
/// input channel.
pub fn chamfer_table<T: Scalar>(
    pred: &ReconstructionOutput<T>,
    truth: &PointCloudPair<T>,
) -> Result<ChamferTable<T>> {
    let mut table = [[T::zero(); 3]; 2];
    for ph in Phase::ALL {
        for s in Substructure::ALL {
            table[ph.index()][s.index()] = chamfer(pred.dense(ph, s), &truth.channel(ph, s));
        }
    }
    Ok(table)
}
