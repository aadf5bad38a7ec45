# raresynth - rare-class synthetic augmentation with LoRA-adapted diffusion
