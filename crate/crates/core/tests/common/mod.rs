#![allow(dead_code)]

use nalgebra::DMatrix;
use xanes_unmix::ImageGeometry;

/// The periodic forward-difference operator as a dense `2N × N` matrix,
/// rows `0..N` for the column direction and `N..2N` for the row direction.
pub fn dense_gradient(geom: ImageGeometry) -> DMatrix<f64> {
    let (rows, cols) = (geom.rows(), geom.cols());
    let n = rows * cols;
    let mut g = DMatrix::zeros(2 * n, n);
    for i in 0..rows {
        for j in 0..cols {
            let k = i * cols + j;
            g[(k, i * cols + (j + 1) % cols)] += 1.0;
            g[(k, k)] -= 1.0;
            g[(n + k, ((i + 1) % rows) * cols + j)] += 1.0;
            g[(n + k, k)] -= 1.0;
        }
    }
    g
}
