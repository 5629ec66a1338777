import os
import logging
from datetime import datetime, timedelta
from typing import Dict, List, Any, Optional
from dataclasses import dataclass, field
from enum import Enum

import json_utils
from date_utils import DateUtils

LIBRARY_VERSION = "0.1.0"

logger = logging.getLogger(__name__)

class RunStatus(Enum):
    """Outcome of a CLI run"""
    SUCCESS = "success"
    FAILED = "failed"
    PARTIAL = "partial"

@dataclass
class RunManifest:
    """Everything needed to identify and reproduce one experiment run"""
    command: str
    status: RunStatus
    start_time: datetime
    end_time: datetime
    config: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    version: str = LIBRARY_VERSION
    files: List[str] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    error_messages: List[str] = field(default_factory=list)

    @property
    def duration(self) -> timedelta:
        return self.end_time - self.start_time

    def to_dict(self) -> Dict[str, Any]:
        return {
            'command': self.command,
            'status': self.status.value,
            'version': self.version,
            'seed': self.seed,
            'start_time': self.start_time.isoformat(),
            'end_time': self.end_time.isoformat(),
            'duration_seconds': self.duration.total_seconds(),
            'config': self.config,
            'files': sorted(self.files),
            'metadata': self.metadata,
            'error_messages': self.error_messages,
        }

def format_duration(duration: timedelta) -> str:
    """Human readable duration"""
    total_seconds = int(duration.total_seconds())
    hours = total_seconds // 3600
    minutes = (total_seconds % 3600) // 60
    seconds = total_seconds % 60
    if hours > 0:
        return f"{hours}h {minutes}m {seconds}s"
    elif minutes > 0:
        return f"{minutes}m {seconds}s"
    return f"{seconds}s"

class ManifestWriter:
    """Writes manifest.json (machine readable) and manifest.txt (report) into an output directory"""

    JSON_NAME = "manifest.json"
    TEXT_NAME = "manifest.txt"

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

    def generate_text_report(self, manifest: RunManifest) -> str:
        lines = []
        lines.append(f"RUN: {manifest.command.upper()}")
        lines.append("=" * 60)
        lines.append(f"Status: {manifest.status.value.upper()}")
        lines.append(f"Version: {manifest.version}")
        lines.append(f"Seed: {manifest.seed}")
        lines.append(f"Start: {manifest.start_time.strftime('%Y-%m-%d %H:%M:%S')}")
        lines.append(f"End: {manifest.end_time.strftime('%Y-%m-%d %H:%M:%S')}")
        lines.append(f"Duration: {format_duration(manifest.duration)}")

        lines.append("")
        lines.append("CONFIG:")
        lines.append("-" * 20)
        for key in sorted(manifest.config):
            lines.append(f"{key} = {manifest.config[key]}")

        if manifest.metadata:
            lines.append("")
            lines.append("METADATA:")
            lines.append("-" * 20)
            for key, value in manifest.metadata.items():
                lines.append(f"{key.replace('_', ' ').title()}: {value}")

        if manifest.error_messages:
            lines.append("")
            lines.append("ERRORS:")
            lines.append("-" * 20)
            for error in manifest.error_messages:
                lines.append(f"- {error}")

        lines.append("")
        lines.append(f"FILES ({len(manifest.files)}):")
        lines.append("-" * 20)
        for name in sorted(manifest.files):
            lines.append(name)
        return "\n".join(lines) + "\n"

    def save(self, manifest: RunManifest) -> Dict[str, str]:
        """Save both manifest files; they list themselves in `files`."""
        for name in (self.JSON_NAME, self.TEXT_NAME):
            if name not in manifest.files:
                manifest.files.append(name)

        json_path = json_utils.save_to_json_file(manifest.to_dict(), self.JSON_NAME, self.output_dir)
        text_path = os.path.join(self.output_dir, self.TEXT_NAME)
        with open(text_path, 'w', encoding='utf-8') as f:
            f.write(self.generate_text_report(manifest))
        logger.info(f"Manifest saved: {json_path}, {text_path}")
        return {'json': json_path, 'text': text_path}

    def log_summary(self, manifest: RunManifest):
        logger.info("=" * 60)
        logger.info(f"RUN COMPLETED: {manifest.command.upper()} - {manifest.status.value.upper()}")
        logger.info(f"Duration: {format_duration(manifest.duration)} | Files: {len(manifest.files)}")
        if manifest.error_messages:
            logger.info(f"Errors: {len(manifest.error_messages)}")
        logger.info("=" * 60)

def create_run_context(command: str, config: Dict[str, Any], seed: Optional[int] = None,
                       metadata: Dict[str, Any] = None) -> Dict[str, Any]:
    """Start collecting the pieces of a manifest"""
    return {
        'command': command,
        'config': dict(config),
        'seed': seed,
        'start_time': DateUtils.now(),
        'metadata': metadata or {},
        'files': [],
        'failed': [],
        'partial': [],
        'error_messages': [],
    }

def add_output_file(context: Dict[str, Any], output_dir: str, path: str):
    """Record an emitted file, relative to the output directory"""
    context['files'].append(os.path.relpath(path, output_dir))

def add_failed_item(context: Dict[str, Any], name: str, error_message: str):
    context['failed'].append(name)
    context['error_messages'].append(f"{name}: {error_message}")

def add_partial_item(context: Dict[str, Any], name: str, reason: str):
    context['partial'].append(name)
    context['error_messages'].append(f"{name}: {reason}")

def finalize_run(context: Dict[str, Any], output_dir: str, total_items: int) -> RunManifest:
    """Derive the status, write the manifest files and log a summary"""
    failed = len(context['failed'])
    if failed and failed >= total_items:
        status = RunStatus.FAILED
    elif failed or context['partial']:
        status = RunStatus.PARTIAL
    else:
        status = RunStatus.SUCCESS

    manifest = RunManifest(
        command=context['command'],
        status=status,
        start_time=context['start_time'],
        end_time=DateUtils.now(),
        config=context['config'],
        seed=context['seed'],
        files=list(context['files']),
        metadata=context['metadata'],
        error_messages=context['error_messages'],
    )
    writer = ManifestWriter(output_dir)
    writer.save(manifest)
    writer.log_summary(manifest)
    return manifest
