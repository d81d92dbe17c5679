OUTPUT_ROOT_ENV = "SCALEWISE_OUTPUT_ROOT"

DEFAULT_PATHS = {
    "tokenizer": "tokenizer.ckpt",
    "teacher": "teacher.ckpt",
    "student": "student.ckpt",
    "loss_log": "loss_log.csv",
    "loss_curve": "loss_curve.png",
    "manifest": "manifest.csv",
    "report": "report.csv",
    "lock": ".lock",
    "run_snapshot": "run.json",
}

MASK_MODE_DESCRIPTIONS = {
    "block_causal": "Each scale attends to itself and every coarser scale (teacher, next-scale prediction)",
    "full": "Every position attends to every position across all scales (one-step student)",
}

ARM_INFO = {
    "full": {
        "description": "One-step student with full cross-scale attention, all losses, pre-restorer on",
        "override": None,
    },
    "causal_mask": {
        "description": "Student keeps the teacher's block-causal mask",
        "override": ("distill", "mask_mode", "block_causal"),
    },
    "no_kl": {
        "description": "Token-level KL term switched off",
        "override": ("loss", "lambda_kl", 0.0),
    },
    "multi_step_conditioned": {
        "description": "No distillation: the teacher completes the LQ pyramid scale by scale",
        "override": ("distill", "one_step", False),
    },
    "no_prerestorer": {
        "description": "Coarse pre-restorer disabled",
        "override": ("distill", "use_prerestorer", False),
    },
}

SUBCOMMAND_HELP = {
    "gen-data": "Generate the procedural toy image set",
    "degrade": "Synthesize LQ images and a paired manifest",
    "train-tokenizer": "Train the multi-scale residual VQ tokenizer",
    "train-teacher": "Train the next-scale prediction teacher",
    "distill": "Distill the teacher into the one-step student",
    "restore": "Restore LQ images with the one-step student",
    "sample": "Sample images from the teacher scale by scale",
    "zeroshot": "Complete LQ token pyramids with the teacher",
    "evaluate": "Score restored images against their HQ references",
    "ablate": "Run the ablation arms and write a comparison table",
    "bench": "Time the student against teacher sampling",
}
