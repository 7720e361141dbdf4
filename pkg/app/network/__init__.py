"""
Learnable modules: attention primitives, the sparse metadata encoder, the visual path,
cross-modal fusion, the full classifier and its ablation baselines.
"""
