import fnmatch
import logging
import os

logger = logging.getLogger(__name__)

# Stale artifacts of an earlier run of the same scenario
RUN_ARTIFACTS = ("*.csv", "*.svg", "*.txt", "*.xlsx")


def clean_folder(folder_path, patterns=RUN_ARTIFACTS):
    """
    Deletes the files in the specified folder whose names match one of patterns.
    Subfolders and the folder itself are left alone.
    Returns a list of deleted items.
    """
    deleted_items = []
    if not os.path.isdir(folder_path):
        return deleted_items
    for filename in sorted(os.listdir(folder_path)):
        file_path = os.path.join(folder_path, filename)
        if not (os.path.isfile(file_path) or os.path.islink(file_path)):
            continue
        if not any(fnmatch.fnmatch(filename, pattern) for pattern in patterns):
            continue
        try:
            os.unlink(file_path)
            deleted_items.append(file_path)
        except OSError as e:
            logger.warning("Failed to delete %s. Reason: %s", file_path, e)
    return deleted_items


def clean_run_outputs(outputs):
    """
    Removes what a previous run of a scenario wrote: the CSV folder contents and the
    SVG, report and workbook files named in its [outputs] block.
    """
    deleted = clean_folder(outputs.csv_dir) if outputs.csv_dir else []
    for path in (outputs.svg_path, outputs.report_path, outputs.workbook_path):
        if path and os.path.isfile(path):
            os.unlink(path)
            deleted.append(path)
    logger.info("Deleted %d stale item(s)", len(deleted))
    return deleted
