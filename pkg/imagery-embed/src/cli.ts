#!/usr/bin/env node
/** Command-line entry point: `imagery-embed embed --images --manifest --out`. */

import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'
import { embedDirectory } from './embed'

export function main(argv: string[]): Promise<number> {
  return new Promise((resolve) => {
    yargs(argv)
      .command(
        'embed',
        'embed PNG tiles listed in a manifest into a CSV of 512-dim vectors',
        (cmd) =>
          cmd
            .option('images', {
              type: 'string',
              demandOption: true,
              describe: 'directory containing the PNG tiles',
            })
            .option('manifest', {
              type: 'string',
              demandOption: true,
              describe: 'CSV with town_id,filename columns',
            })
            .option('out', {
              type: 'string',
              demandOption: true,
              describe: 'output embeddings CSV path',
            }),
        (args) => {
          try {
            const n = embedDirectory(args.images, args.manifest, args.out)
            console.error(`embedded ${n} images -> ${args.out}`)
            resolve(0)
          } catch (err) {
            console.error(String(err))
            resolve(1)
          }
        },
      )
      .demandCommand(1)
      .strict()
      .fail((msg, err) => {
        console.error(msg ?? String(err))
        resolve(2)
      })
      .parse()
  })
}

if (require.main === module) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code
  })
}
