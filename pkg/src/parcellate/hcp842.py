"""ROI names of the HCP842 tractography atlas, in label order (label = index + 1)."""

HCP842_ROI_NAMES = (
    "Acoustic_Radiation_L",
    "Acoustic_Radiation_R",
    "Cortico_Striatal_Pathway_L",
    "Cortico_Striatal_Pathway_R",
    "Cortico_Spinal_Tract_L",
    "Cortico_Spinal_Tract_R",
    "Corticothalamic_Pathway_L",
    "Corticothalamic_Pathway_R",
    "Fornix_L",
    "Fornix_R",
    "Frontopontine_Tract_L",
    "Frontopontine_Tract_R",
    "Occipitopontine_Tract_L",
    "Occipitopontine_Tract_R",
    "Optic_Radiation_L",
    "Optic_Radiation_R",
    "Parietopontine_Tract_L",
    "Parietopontine_Tract_R",
    "Temporopontine_Tract_L",
    "Temporopontine_Tract_R",
    "Arcuate_Fasciculus_L",
    "Arcuate_Fasciculus_R",
    "Cingulum_L",
    "Cingulum_R",
    "Extreme_Capsule_L",
    "Extreme_Capsule_R",
    "Frontal_Aslant_Tract_L",
    "Frontal_Aslant_Tract_R",
    "Inferior_Fronto_Occipital_Fasciculus_L",
    "Inferior_Fronto_Occipital_Fasciculus_R",
    "Inferior_Longitudinal_Fasciculus_L",
    "Inferior_Longitudinal_Fasciculus_R",
    "Middle_Longitudinal_Fasciculus_L",
    "Middle_Longitudinal_Fasciculus_R",
    "Superior_Longitudinal_Fasciculus_L",
    "Superior_Longitudinal_Fasciculus_R",
    "U_Fiber_L",
    "U_Fiber_R",
    "Uncinate_Fasciculus_L",
    "Uncinate_Fasciculus_R",
    "Vertical_Occipital_Fasciculus_L",
    "Vertical_Occipital_Fasciculus_R",
    "Anterior_Commissure",
    "Corpus_Callosum",
    "Posterior_Commissure",
    "Cerebellum_L",
    "Cerebellum_R",
    "Inferior_Cerebellar_Peduncle_L",
    "Inferior_Cerebellar_Peduncle_R",
    "Middle_Cerebellar_Peduncle",
    "Superior_Cerebellar_Peduncle",
    "Vermis",
    "Central_Tegmental_Tract_L",
    "Central_Tegmental_Tract_R",
    "Dorsal_Longitudinal_Fasciculus_L",
    "Dorsal_Longitudinal_Fasciculus_R",
    "Lateral_Lemniscus_L",
    "Lateral_Lemniscus_R",
    "Medial_Lemniscus_L",
    "Medial_Lemniscus_R",
    "Medial_Longitudinal_Fasciculus_L",
    "Medial_Longitudinal_Fasciculus_R",
    "Rubrospinal_Tract_L",
    "Rubrospinal_Tract_R",
    "Spinothalamic_Tract_L",
    "Spinothalamic_Tract_R",
    "CNII_L",
    "CNII_R",
    "CNIII_L",
    "CNIII_R",
    "CNIV_L",
    "CNIV_R",
    "CNV_L",
    "CNV_R",
    "CNVII_L",
    "CNVII_R",
    "CNVIII_L",
    "CNVIII_R",
    "CNX_L",
    "CNX_R",
)

assert len(HCP842_ROI_NAMES) == 80
