# -*- coding: utf-8 -*-
'''
Convinience functions and classes.
'''

import ast
import configparser
import datetime
import functools

from pcapbd.config import FILEPATH_CONFIG_TEMPLATE_ORIGINAL, FILEPATH_CONFIG_USER
from pcapbd.logger import info

SEPERATOR = "-"*79
SEPERATOR_HEAVY = "="*79
SEPERATOR_SOFT = "- " * 79
SEPERATOR_SOFT = SEPERATOR_SOFT[:80]


class DotMap(dict):
    """
    Read access by attribute, conf.trigger.burst for conf["trigger"]["burst"].
    Missing keys read as None.
    """
    def __getattr__(self, attr):
        return self.get(attr)


def parse_config_value(value):
    '''
    Config values are python literals. Anything that is not (an ip address,
    a path) stays a string.
    '''
    if value is None:
        return None
    try:
        return ast.literal_eval(value)
    except (ValueError, SyntaxError):
        return str(value).strip()


def get_config_in_dot_notation(templateFilename=FILEPATH_CONFIG_TEMPLATE_ORIGINAL, configFilename=FILEPATH_CONFIG_USER):
    '''
    Read the template first and the user file second, so that user values
    overwrite the defaults. Missing files are skipped by configparser.
    '''
    config = configparser.ConfigParser(allow_no_value=True, strict=False, interpolation=configparser.ExtendedInterpolation())
    # In order to prevent key to get converted to lower case
    config.optionxform = lambda option: option
    config.read([str(f) for f in (templateFilename, configFilename) if f])
    dot = DotMap()
    for section in config.sections():
        sectionDot = DotMap()
        for key, value in config[section].items():
            sectionDot[key] = parse_config_value(value)
        dot[section] = sectionDot
    return dot


def main_timer(name):
    '''
    Decorator logging start, end and runtime of a command.
    '''
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            TIMESTAMP_START = datetime.datetime.now()
            info(SEPERATOR_HEAVY)
            info(f"STARTING {name}")
            info(SEPERATOR)

            result = func(*args, **kwargs)

            TIMESTAMP_DELTA = datetime.datetime.now() - TIMESTAMP_START
            info(SEPERATOR)
            info(f"END {name} in {TIMESTAMP_DELTA}")
            info(SEPERATOR_HEAVY)
            return result
        return wrapper
    return decorator


def print_starting_banner(headline):
    maxLength = len(SEPERATOR_HEAVY)
    blank = ("||" + " " * maxLength)[:maxLength-2] + "||"
    padding = int((maxLength / 2.) - (len(headline) / 2.))
    main = ("||" + " " * maxLength)[:padding] + headline
    main = (main + " " * maxLength)[:maxLength-2] + "||"
    info(SEPERATOR_HEAVY)
    info(blank)
    info(main)
    info(blank)
    info(SEPERATOR_HEAVY)


def log_resolved_config(title, confDict):
    '''
    Log every resolved parameter as `key = value`, one per line.
    '''
    info(f"[ {title} ]")
    for key, value in confDict.items():
        info(f"    {key} = {value}")


def get_timestamp(strformat=None):
    if strformat:
        return datetime.datetime.now().strftime(strformat)
    else:
        return datetime.datetime.now().strftime("%Y%m%d")


def read_file_as_string(filepath):
    '''
    '''
    with open(filepath, 'r', encoding='utf-8') as f:
        return f.read()


def write_file_from_string(filepath, contentString):
    '''
    '''
    with open(filepath, 'w', encoding='utf-8') as f:
        return f.write(contentString)


def parse_csv_list(value, cast=str):
    '''
    "a, b,c" --> [cast(a), cast(b), cast(c)], empty input --> []
    '''
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    return [cast(x.strip()) for x in str(value).split(",") if x.strip()]
