"""
Services RNNPrune: critères, entraînement, analyse et orchestration.

- criteria: scores d'élagage (jacobien, SNIP, Foresight, aléatoire, magnitude) et top-K
- optimizer / training: Adam masqué, boucle d'entraînement, calendrier L2
- svd / analysis: spectre des Jacobiennes temporelles, connectivité
- datasets: tâches synthétiques, D̃, manifeste des données
- storage: fichiers .rnnp, points de reprise, CSV/JSON
- experiment_service / report: pipelines prune/train/analyze/compare
"""
