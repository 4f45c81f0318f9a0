# -*- coding: utf-8 -*-
'''
-------------------------------------------------------------------------------
 Human-readable text reports, rendered from the jinja2 templates shipped in
 pcapbd/templates/.
-------------------------------------------------------------------------------
'''
from collections import Counter
import os

from jinja2 import Template

from pcapbd.config import FORMAT_LOGS_TIMESTAMP, PATH_TEMPLATES
from pcapbd.helpers import SEPERATOR, get_timestamp, read_file_as_string, write_file_from_string
from pcapbd.logger import info

TEMPLATE_INJECTION = "injection.txt.jinja"
TEMPLATE_AUDIT = "audit.txt.jinja"
TEMPLATE_EVALUATION = "evaluation.txt.jinja"
TEMPLATE_CLUSTERS = "clusters.txt.jinja"


def render(templateName, **kwargs):
    tm = Template(read_file_as_string(os.path.join(PATH_TEMPLATES, templateName)))
    return tm.render(separator=SEPERATOR, timestamp=get_timestamp(FORMAT_LOGS_TIMESTAMP), **kwargs)


def format_injection_report(report, cfg, source="", target=""):
    return render(TEMPLATE_INJECTION, trigger=cfg.as_dict(), summary=report.summary_dict(),
                  source=source, target=target)


def format_findings(findings, source="", baseline=None):
    counts = Counter(f.kind.value for f in findings)
    return render(TEMPLATE_AUDIT, findings=findings, counts=dict(sorted(counts.items())),
                  source=source, baseline=baseline)


def format_eval_report(report, comparison=None):
    confusion = report.confusion.tolist() if report.confusion is not None else None
    return render(TEMPLATE_EVALUATION, report=report, confusion=confusion, comparison=comparison)


def format_cluster_report(analysis):
    return render(TEMPLATE_CLUSTERS, analysis=analysis)


def write_report(content, filepath):
    info(f"Writing report: {filepath}")
    write_file_from_string(filepath, content)
