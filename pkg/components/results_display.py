import pandas as pd


def display_table(df: pd.DataFrame, title: str = "", float_format: str = "{:.4f}"):
    """
    Print a DataFrame as an aligned text table.

    Args:
        df: Table to print
        title: Optional heading line
    """
    if title:
        print(title)
        print("-" * len(title))
    formatters = {column: float_format.format for column in df.select_dtypes("float").columns}
    print(df.to_string(index=False, formatters=formatters))


def display_metric_summary(means: dict, count: int):
    print(f"Images evaluated: {count}")
    print(f"PSNR  restored {means['psnr']:.2f} dB | LQ {means['psnr_lq']:.2f} dB "
          f"| gain {means['psnr'] - means['psnr_lq']:+.2f} dB")
    print(f"SSIM  restored {means['ssim']:.4f} | LQ {means['ssim_lq']:.4f}")


def display_speed_report(report):
    """
    Print the student/teacher timing comparison.

    Args:
        report: SpeedReport from the benchmark
    """
    print(f"Student:   {report.student_ms:8.2f} ms median, {report.student_passes} pass")
    print(f"Teacher:   {report.teacher_ms:8.2f} ms median, {report.teacher_passes} passes")
    print(f"Speedup:   {report.speedup:8.2f}x over {report.images} images")
    print(f"Tokenizer: {report.tokenizer_ms:8.2f} ms median (excluded above)")
    print(f"Trainable: {100.0 * report.trainable_fraction:.2f}% of backbone parameters")


def display_checkpoint_summary(kind: str, path, checkpoint_id: str, step: int, extra: dict = None):
    detail = "".join(f", {k} {v:.4f}" if isinstance(v, float) else f", {k} {v}"
                     for k, v in (extra or {}).items())
    print(f"Saved {kind} checkpoint {path} (id {checkpoint_id}, step {step}{detail})")
