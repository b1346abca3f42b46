//! Shipped experiment presets, one per figure of the reference experiment.

pub const PRESETS: &[(&str, &str)] = &[
    ("star-point-default", include_str!("../../presets/star-point-default.toml")),
    ("fig2a", include_str!("../../presets/fig2a.toml")),
    ("fig2b", include_str!("../../presets/fig2b.toml")),
    ("fig3", include_str!("../../presets/fig3.toml")),
    ("fig4-brightness", include_str!("../../presets/fig4-brightness.toml")),
    ("fig5", include_str!("../../presets/fig5.toml")),
    ("fig6", include_str!("../../presets/fig6.toml")),
    ("fig7", include_str!("../../presets/fig7.toml")),
];

/// Preset text by name; `star-point.default` is accepted for `star-point-default`.
pub fn get(name: &str) -> Option<&'static str> {
    let name = name.replace('.', "-");
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub(crate) fn print(name: Option<&str>) -> i32 {
    match name {
        None => {
            for (n, _) in PRESETS {
                println!("{n}");
            }
            0
        }
        Some(n) => match get(n) {
            Some(text) => {
                print!("{text}");
                0
            }
            None => {
                eprintln!("error: unknown preset `{n}`");
                2
            }
        },
    }
}
