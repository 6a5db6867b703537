#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# test/__init__.py
