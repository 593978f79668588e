# Phenotype knowledge graph curation and knowledge-distilled vision-language pretraining
