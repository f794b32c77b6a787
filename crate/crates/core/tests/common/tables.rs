//! Published figures used as oracles.

/// GZSL `(model, dataset, U, S, H)` on the original features.
pub const ORIGINAL_GZSL: [(&str, &str, f64, f64, f64); 40] = [
    ("f-CLSWGAN", "FLO", 61.5, 77.2, 68.5),
    ("f-CLSWGAN", "CUB", 43.9, 57.4, 49.8),
    ("f-CLSWGAN", "SUN", 43.3, 35.9, 39.2),
    ("f-CLSWGAN", "AWA2", 47.6, 75.2, 58.3),
    ("LisGAN", "FLO", 56.6, 83.3, 67.4),
    ("LisGAN", "CUB", 43.9, 61.1, 51.1),
    ("LisGAN", "SUN", 45.8, 35.5, 40.0),
    ("LisGAN", "AWA2", 55.2, 67.1, 60.6),
    ("LsrGAN", "FLO", 60.1, 84.2, 70.2),
    ("LsrGAN", "CUB", 48.0, 58.3, 52.6),
    ("LsrGAN", "SUN", 44.4, 37.4, 40.6),
    ("LsrGAN", "AWA2", 48.9, 80.7, 60.9),
    ("CVAE", "FLO", 17.2, 63.3, 27.1),
    ("CVAE", "CUB", 24.6, 52.1, 33.4),
    ("CVAE", "SUN", 20.7, 30.4, 24.6),
    ("CVAE", "AWA2", 37.8, 87.7, 52.8),
    ("CADA-VAE", "FLO", 53.6, 78.2, 63.6),
    ("CADA-VAE", "CUB", 51.7, 54.5, 52.7),
    ("CADA-VAE", "SUN", 45.2, 37.3, 40.9),
    ("CADA-VAE", "AWA2", 55.1, 77.0, 64.2),
    ("VAE-cFlow", "FLO", 48.9, 78.3, 60.2),
    ("VAE-cFlow", "CUB", 47.8, 56.0, 51.6),
    ("VAE-cFlow", "SUN", 47.8, 38.3, 42.5),
    ("VAE-cFlow", "AWA2", 55.1, 72.2, 62.5),
    ("f-VAEGAN-D2", "FLO", 57.7, 82.9, 68.0),
    ("f-VAEGAN-D2", "CUB", 46.8, 61.6, 53.2),
    ("f-VAEGAN-D2", "SUN", 43.8, 34.8, 38.8),
    ("f-VAEGAN-D2", "AWA2", 45.4, 77.7, 57.3),
    ("tf-VAEGAN", "FLO", 62.3, 83.4, 71.3),
    ("tf-VAEGAN", "CUB", 54.4, 61.0, 57.5),
    ("tf-VAEGAN", "SUN", 44.8, 39.8, 42.2),
    ("tf-VAEGAN", "AWA2", 54.1, 79.2, 64.3),
    ("FREE", "FLO", 66.8, 84.6, 74.7),
    ("FREE", "CUB", 52.8, 60.6, 56.5),
    ("FREE", "SUN", 46.5, 37.3, 41.4),
    ("FREE", "AWA2", 61.6, 73.4, 67.0),
    ("GCM-CF", "FLO", 55.7, 59.9, 57.7),
    ("GCM-CF", "CUB", 52.1, 61.0, 56.2),
    ("GCM-CF", "SUN", 44.9, 38.3, 41.3),
    ("GCM-CF", "AWA2", 45.1, 87.8, 59.6),
];

/// The one printed row whose H disagrees with its own U and S.
pub const MISPRINTED: (&str, &str) = ("CADA-VAE", "CUB");

/// Per dataset: conventional seen training, generalized seen training,
/// seen test and unseen test sample counts.
pub const SPLIT_COUNTS: [(&str, usize, usize, usize, usize); 5] = [
    ("FLO", 7034, 5631, 1403, 1155),
    ("CUB", 8821, 7057, 1764, 2967),
    ("SUN", 12900, 10320, 2580, 1440),
    ("AWA2", 29409, 23527, 5882, 7913),
    ("AWA", 25517, 19832, 4958, 5685),
];

pub const SHOTS: [usize; 4] = [1, 5, 10, 20];

/// Cells left blank in the few-shot results: too few samples per class.
pub const OVERFLOW: (&str, usize) = ("SUN", 20);
