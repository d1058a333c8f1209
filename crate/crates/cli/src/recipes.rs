//! Figure recipes shipped with the binary.

macro_rules! recipes {
    ($($name:literal),* $(,)?) => {
        const RECIPES: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../../../recipes/", $name, ".toml")))),*
        ];
    };
}

recipes!(
    "fig2_correlation_map",
    "fig3a_exact",
    "fig3b_fuzzy",
    "fig4_kappa_sweep",
    "fig5_sigma_sweep",
    "fig6_fidelity_scan",
    "fig6_sampling",
    "fig7_kc_sweep",
    "fig7_shots_sweep",
    "fig8_fluctuations",
    "fig9a_homodyne_cat",
    "fig9b_homodyne_cat",
    "fig9c_homodyne_coherent",
);

pub fn names() -> impl Iterator<Item = &'static str> {
    RECIPES.iter().map(|(n, _)| *n)
}

pub fn get(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".toml").unwrap_or(name);
    RECIPES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
