//! Symmetric quadrature rules on the reference tetrahedron and triangle.
//!
//! Points are given in barycentric coordinates; weights sum to the reference
//! measure (1/6 for the tetrahedron, 1/2 for the triangle).

/// Quadrature point in barycentric coordinates with its weight.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint<const N: usize> {
    pub bary: [f64; N],
    pub weight: f64,
}

/// 14-point rule, exact for polynomials of degree 5 on the tetrahedron.
pub fn tet_degree5() -> Vec<QuadPoint<4>> {
    let mut pts = Vec::with_capacity(14);
    for &(a, w) in &[
        (0.092_735_250_310_891_2, 0.012_248_840_519_393_66),
        (0.310_885_919_263_300_6, 0.018_781_320_953_002_64),
    ] {
        let b = 1.0 - 3.0 * a;
        for k in 0..4 {
            let mut bary = [a; 4];
            bary[k] = b;
            pts.push(QuadPoint { bary, weight: w });
        }
    }
    let a = 0.045_503_704_125_649_6;
    let b = 0.5 - a;
    let w = 0.007_091_003_462_846_911;
    for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
        let mut bary = [b; 4];
        bary[i] = a;
        bary[j] = a;
        pts.push(QuadPoint { bary, weight: w });
    }
    pts
}

/// 6-point rule, exact for polynomials of degree 4 on the triangle.
pub fn triangle_degree4() -> Vec<QuadPoint<3>> {
    let mut pts = Vec::with_capacity(6);
    for &(a, w) in &[
        (0.445_948_490_915_965, 0.223_381_589_678_011),
        (0.091_576_213_509_771, 0.109_951_743_655_322),
    ] {
        let b = 1.0 - 2.0 * a;
        for k in 0..3 {
            let mut bary = [a; 3];
            bary[k] = b;
            pts.push(QuadPoint {
                bary,
                weight: 0.5 * w,
            });
        }
    }
    pts
}
