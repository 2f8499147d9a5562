//! Approximate 2-D scalp positions (x right, y nose), unit radius at the
//! T7–T8 / Fpz–Oz circle.

const LAYOUT: &[(&str, f64, f64)] = &[
    ("Fp1", -0.31, 0.95),
    ("Fpz", 0.0, 1.0),
    ("Fp2", 0.31, 0.95),
    ("AF7", -0.59, 0.81),
    ("AF3", -0.29, 0.76),
    ("AFz", 0.0, 0.75),
    ("AF4", 0.29, 0.76),
    ("AF8", 0.59, 0.81),
    ("F7", -0.81, 0.59),
    ("F5", -0.61, 0.55),
    ("F3", -0.41, 0.53),
    ("F1", -0.2, 0.51),
    ("Fz", 0.0, 0.5),
    ("F2", 0.2, 0.51),
    ("F4", 0.41, 0.53),
    ("F6", 0.61, 0.55),
    ("F8", 0.81, 0.59),
    ("FT7", -0.95, 0.31),
    ("FC5", -0.67, 0.27),
    ("FC3", -0.45, 0.25),
    ("FC1", -0.22, 0.24),
    ("FCz", 0.0, 0.25),
    ("FC2", 0.22, 0.24),
    ("FC4", 0.45, 0.25),
    ("FC6", 0.67, 0.27),
    ("FT8", 0.95, 0.31),
    ("T9", -1.15, 0.0),
    ("T7", -1.0, 0.0),
    ("C5", -0.75, 0.0),
    ("C3", -0.5, 0.0),
    ("C1", -0.25, 0.0),
    ("Cz", 0.0, 0.0),
    ("C2", 0.25, 0.0),
    ("C4", 0.5, 0.0),
    ("C6", 0.75, 0.0),
    ("T8", 1.0, 0.0),
    ("T10", 1.15, 0.0),
    ("TP7", -0.95, -0.31),
    ("CP5", -0.67, -0.27),
    ("CP3", -0.45, -0.25),
    ("CP1", -0.22, -0.24),
    ("CPz", 0.0, -0.25),
    ("CP2", 0.22, -0.24),
    ("CP4", 0.45, -0.25),
    ("CP6", 0.67, -0.27),
    ("TP8", 0.95, -0.31),
    ("P9", -0.95, -0.69),
    ("P7", -0.81, -0.59),
    ("P5", -0.61, -0.55),
    ("P3", -0.41, -0.53),
    ("P1", -0.2, -0.51),
    ("Pz", 0.0, -0.5),
    ("P2", 0.2, -0.51),
    ("P4", 0.41, -0.53),
    ("P6", 0.61, -0.55),
    ("P8", 0.81, -0.59),
    ("P10", 0.95, -0.69),
    ("PO7", -0.59, -0.81),
    ("PO3", -0.29, -0.76),
    ("POz", 0.0, -0.75),
    ("PO4", 0.29, -0.76),
    ("PO8", 0.59, -0.81),
    ("O1", -0.31, -0.95),
    ("Oz", 0.0, -1.0),
    ("O2", 0.31, -0.95),
    ("Iz", 0.0, -1.2),
];

/// Case-insensitive lookup.
pub fn electrode_position(name: &str) -> Option<(f64, f64)> {
    LAYOUT.iter().find(|(n, _, _)| n.eq_ignore_ascii_case(name)).map(|&(_, x, y)| (x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup() {
        assert_eq!(electrode_position("cz"), Some((0.0, 0.0)));
        assert!(electrode_position("C3").unwrap().0 < 0.0);
        assert_eq!(electrode_position("X1"), None);
    }
}
